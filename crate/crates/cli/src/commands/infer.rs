use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use tfce_core::prelude::*;
use tfce_core::inference::TailSign;

use super::cluster::{cluster_records, ClusterReport};
use super::{write_grid, write_json};
use crate::cli::InferArgs;
use crate::config::{Design, FileDigest, InputSource, Manifest, RunConfig, Timings};
use crate::load::load_subjects;
use crate::permutations::read_permutation_matrix;

pub const NULL_CSV_HEADER: &str = "b,statistic,max_value";

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

fn read_groups(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading group labels {}", path.display()))?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| match tok {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => bail!("{}: label {} is {tok:?}, expected 1 or 0", path.display(), i + 1),
        })
        .collect()
}

/// Configuration for a fresh run, or the one recorded in `--replay`.
pub fn run_config(args: &InferArgs) -> Result<(RunConfig, Option<Manifest>)> {
    if let Some(path) = &args.replay {
        let manifest = Manifest::read(path)?;
        manifest.verify().context("manifest cannot be replayed")?;
        let config = RunConfig { output: args.out.clone(), workers: args.workers, ..manifest.config.clone() };
        return Ok((config, Some(manifest)));
    }
    let input = match (&args.input, &args.in_list) {
        (Some(p), None) => InputSource::Stack(absolute(p)?),
        (None, Some(p)) => InputSource::List(absolute(p)?),
        _ => bail!("give exactly one of --in and --in-list"),
    };
    let design = match &args.groups {
        Some(p) => Design::TwoSample { groups: read_groups(p)? },
        None => Design::OneSample,
    };
    let config = RunConfig {
        input,
        mask: args.mask.as_deref().map(absolute).transpose()?,
        connectivity: args.enhance.conn.neighbor_count(),
        extent_exponent: args.enhance.e,
        height_exponent: args.enhance.h,
        h0: args.enhance.h0,
        design,
        n_perm: args.n_perm,
        seed: args.seed,
        exhaustive: args.exhaustive,
        permutation_matrix: args.perm_matrix.as_deref().map(absolute).transpose()?,
        tails: args.tails.into(),
        tfce: !args.no_tfce,
        cluster_extent_cdt: args.cluster_extent,
        cluster_mass_cdt: args.cluster_mass,
        mass_convention: args.mass_convention.into(),
        discretized_steps: args.discretized,
        output: args.out.clone(),
        workers: args.workers,
    };
    Ok((config, None))
}

fn plan_for(config: &RunConfig) -> Result<RandomizationPlan> {
    if let Some(path) = &config.permutation_matrix {
        return Ok(read_permutation_matrix(path)?);
    }
    Ok(match (&config.design, config.exhaustive) {
        (Design::OneSample, false) => RandomizationPlan::sign_flip(config.n_perm, config.seed),
        (Design::OneSample, true) => RandomizationPlan::sign_flip_exhaustive(),
        (Design::TwoSample { groups }, false) => RandomizationPlan::two_sample(groups.clone(), config.n_perm, config.seed),
        (Design::TwoSample { groups }, true) => RandomizationPlan::two_sample_exhaustive(groups.clone()),
    })
}

fn tail_suffix(tail: TailSign) -> &'static str {
    match tail {
        TailSign::Positive => "pos",
        TailSign::Negative => "neg",
    }
}

pub fn infer(args: &InferArgs) -> Result<Manifest> {
    let (config, recorded) = run_config(args)?;
    let manifest = execute(&config)?;
    if let Some(old) = recorded {
        if old.version != manifest.version {
            eprintln!("warning: replaying a run recorded by version {} with {}", old.version, manifest.version);
        }
    }
    Ok(manifest)
}

fn execute(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    let start = Instant::now();
    let loaded = load_subjects(&config.input, config.mask.as_deref())?;
    let mut inputs: Vec<FileDigest> = loaded.files.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?;
    if let Some(p) = &config.permutation_matrix {
        inputs.push(FileDigest::of(p)?);
    }
    let plan = plan_for(config)?;
    let data = &loaded.data;
    let mask = Arc::clone(data.mask());
    let adjacency = Adjacency::new(Arc::clone(&mask), config.connectivity()?)?;
    let options = InferenceOptions {
        enhancement: match config.discretized_steps {
            Some(steps) => Enhancement::Discretized(DiscretizationScheme { steps }),
            None => Enhancement::Exact,
        },
        mass_convention: config.mass_convention,
        workers: config.workers,
    };
    let load_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let result = run_inference(
        data,
        &adjacency,
        &config.enhance_params()?,
        &plan,
        &config.statistics(),
        config.tails,
        &options,
    )?;
    let inference_s = t.elapsed().as_secs_f64();
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }

    let t = Instant::now();
    let out = &config.output;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let dims = loaded.dims;
    let template = Some(&loaded.template);
    let mut outputs = Vec::new();
    let mut emit = |name: String, grid: Vec<f64>| -> Result<()> {
        write_grid(template, &dims, grid, &out.join(&name))?;
        outputs.push(name);
        Ok(())
    };
    emit("stat.nii".into(), result.statistic.to_grid(0.0))?;
    let two_sided = config.tails == Tails::TwoSided;
    for o in &result.outcomes {
        let name = o.kind.name();
        emit(format!("p_{name}.nii"), o.p.to_grid())?;
        for t in &o.tails {
            let suffix = tail_suffix(t.tail);
            if two_sided {
                emit(format!("p_{name}_{suffix}.nii"), t.p.to_grid())?;
            }
            emit(format!("{name}_{suffix}.nii"), t.scores.to_grid())?;
        }
    }

    let mut csv = String::from(NULL_CSV_HEADER);
    csv.push('\n');
    for o in &result.outcomes {
        for t in &o.tails {
            let label = match (two_sided, t.tail) {
                (false, _) => o.kind.name().to_string(),
                (true, TailSign::Positive) => format!("{}+", o.kind.name()),
                (true, TailSign::Negative) => format!("{}-", o.kind.name()),
            };
            for (b, m) in t.null.maxima.iter().enumerate() {
                writeln!(csv, "{},{label},{m}", b + 1).expect("writing to a String");
            }
        }
    }
    std::fs::write(out.join("null_distribution.csv"), csv)?;
    outputs.push("null_distribution.csv".into());

    let mut report = ClusterReport { connectivity: config.connectivity, statistics: Vec::new() };
    for o in &result.outcomes {
        for t in &o.tails {
            if let Some(c) = &t.clusters {
                let values = match t.tail {
                    TailSign::Positive => result.statistic.clone(),
                    TailSign::Negative => result.statistic.negated(),
                };
                report.statistics.push(cluster_records(o.kind.name(), t.tail, &c.table, Some(&c.p), &values));
            }
        }
    }
    write_json(&report, Some(&out.join("clusters.json")))?;
    outputs.push("clusters.json".into());
    let write_s = t.elapsed().as_secs_f64();

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        seed: config.seed,
        n_perm: result.n_perm,
        n_subjects: data.n_subjects(),
        n_voxels: data.n_voxels(),
        config: config.clone(),
        inputs,
        outputs,
        warnings: result.warnings.clone(),
        timings: Timings { load_s, inference_s, write_s, total_s: start.elapsed().as_secs_f64() },
    };
    write_json(&manifest, Some(&out.join("manifest.json")))?;
    Ok(manifest)
}
