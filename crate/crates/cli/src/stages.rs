use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use mvpa_core::assess::{self, PpcReport};
use mvpa_core::bouts::{self, DayObservation};
use mvpa_core::diagnose;
use mvpa_core::ingest::{self, CovariateRecord, DesignInfo, DesignMatrix, IntensityKind, MinuteSeries};
use mvpa_core::mcmc::{
    read_draws_binary, write_draws_binary, write_draws_csv, ChainConfig, Checkpoint, CountFamily, ModelData,
    ModelParams, PosteriorDraws, PriorConfig, PriorPreset, Sampler,
};
use mvpa_core::simulate;
use mvpa_core::usual::{self, Population};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::{AssessArgs, Command, DetectArgs, DiagnoseArgs, FitArgs, PreflightArgs, SimulateArgs, UsualArgs};

/// Fold command-line flags into the configuration so the manifest records
/// the values actually used.
pub fn apply_overrides(cmd: &Command, cfg: &mut Config) -> CliResult<()> {
    match cmd {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            s.persons = a.persons.unwrap_or(s.persons);
            s.days = a.days.unwrap_or(s.days);
            s.family = a.family.unwrap_or(s.family);
            s.dispersion = a.dispersion.or(s.dispersion);
            s.minutes |= a.minutes;
        }
        Command::Fit(a) => {
            let m = &mut cfg.mcmc;
            m.chains = a.chains.unwrap_or(m.chains);
            m.iters = a.iters.unwrap_or(m.iters);
            m.burnin = a.burnin.unwrap_or(m.burnin);
            m.thin = a.thin.unwrap_or(m.thin);
            m.checkpoint_every = a.checkpoint_every.unwrap_or(m.checkpoint_every);
            cfg.model.family = a.family.unwrap_or(cfg.model.family);
            cfg.model.prior = a.prior.unwrap_or(cfg.model.prior);
        }
        Command::Assess(a) => {
            cfg.assess.replicates = a.replicates.unwrap_or(cfg.assess.replicates);
            cfg.assess.compare_nb |= a.compare_nb;
        }
        Command::Usual(a) => {
            let u = &mut cfg.usual;
            u.threshold = a.threshold.unwrap_or(u.threshold);
            u.draws = a.draws.unwrap_or(u.draws);
            if let Some(g) = &a.grid {
                let (max, step) = parse_grid(g)?;
                u.grid_max = max;
                u.grid_step = step;
            }
        }
        Command::Detect(_) | Command::Preflight(_) | Command::Diagnose(_) => {}
    }
    Ok(())
}

/// `MAX:STEP` or `0:MAX:STEP`.
fn parse_grid(s: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --grid `{s}` (expected MAX:STEP or 0:MAX:STEP)")))?;
    match parts.as_slice() {
        [max, step] => Ok((*max, *step)),
        [start, max, step] if *start == 0.0 => Ok((*max, *step)),
        [_, _, _] => Err(CliError::Usage("the density grid starts at 0".into())),
        _ => Err(CliError::Usage(format!("bad --grid `{s}` (expected MAX:STEP or 0:MAX:STEP)"))),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Truth behind a simulated data set, for scoring recovery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub family: CountFamily,
    pub columns: Vec<String>,
    pub params: ModelParams,
    pub design: DesignInfo,
}

/// Default negative-binomial dispersion of simulated data.
const DEFAULT_KAPPA: f64 = 2.0;

pub fn simulate(a: &SimulateArgs, cfg: &Config) -> CliResult<()> {
    let s = &cfg.simulate;
    create_dir(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let records = simulate::CovariateGenerator::default().generate(s.persons, &mut rng);
    let design = DesignMatrix::from_records(&records, &cfg.design.spec())?;
    let mut truth = simulate::table2_truth(design.columns());
    truth.lambda = match (s.dispersion, s.family) {
        (Some(d), _) => d,
        (None, CountFamily::NegBinomial) => DEFAULT_KAPPA,
        (None, CountFamily::GenPoisson) => truth.lambda,
    };
    let sim = simulate::simulate_dataset(&truth, s.family, &design, s.days, &mut rng)?;

    let mut outputs = vec![a.out.join("covariates.csv"), a.out.join("days.csv"), a.out.join("effects.csv")];
    ingest::write_covariates(&outputs[0], &records)?;
    bouts::write_days(&outputs[1], &sim.days)?;
    write_effects(&outputs[2], &design.person_ids, &sim.effects)?;
    if s.minutes {
        let series = sim
            .days
            .iter()
            .map(|d| simulate::simulate_minutes(d, &mut rng))
            .collect::<mvpa_core::Result<Vec<MinuteSeries>>>()?;
        let path = a.out.join("minutes.csv");
        ingest::write_minutes(&path, &series)?;
        outputs.push(path);
    }
    let truth_path = a.out.join("truth.json");
    write_json(
        &truth_path,
        &Truth {
            family: s.family,
            columns: design.columns().to_vec(),
            params: truth,
            design: design.info.clone(),
        },
    )?;
    outputs.push(truth_path);
    Manifest::new("simulate", Some(a.seed), &cfg.to_toml(), &[])?.finish(&a.out, "manifest.json", &outputs)?;
    let zero = sim.days.iter().filter(|d| d.y1 == 0).count() as f64 / sim.days.len() as f64;
    eprintln!(
        "simulated {} persons × {} days; {:.1}% of days without a bout",
        s.persons,
        s.days,
        100.0 * zero
    );
    Ok(())
}

fn write_effects(path: &Path, ids: &[String], effects: &[[f64; 2]]) -> CliResult<()> {
    let mut text = String::from("person_id,b1,b2\n");
    for (id, b) in ids.iter().zip(effects) {
        text.push_str(&format!("{id},{},{}\n", b[0], b[1]));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn detect(a: &DetectArgs, cfg: &Config) -> CliResult<()> {
    create_dir(&a.out)?;
    let load = ingest::load_minutes(&a.minutes, cfg.ingest.intensity)?;
    let conv = cfg.ingest.count_conversion.as_ref();
    let days = load
        .series
        .par_iter()
        .map(|s| {
            let s = match s.kind {
                IntensityKind::Count => ingest::counts_to_mets(s, conv)?,
                IntensityKind::Met => s.clone(),
            };
            bouts::detect_bouts(&s, &cfg.bouts)
        })
        .collect::<mvpa_core::Result<Vec<DayObservation>>>()?;
    let outputs = vec![a.out.join("bouts.csv"), a.out.join("days.csv"), a.out.join("rejections.csv")];
    bouts::write_bouts(&outputs[0], &days)?;
    bouts::write_days(&outputs[1], &days)?;
    ingest::write_rejections(&outputs[2], &load.rejected)?;
    Manifest::new("detect", None, &cfg.to_toml(), std::slice::from_ref(&a.minutes))?.finish(&a.out, "manifest.json", &outputs)?;
    if days.is_empty() {
        return Err(CliError::Usage("no valid person-day in the minutes file".into()));
    }
    let summary = bouts::summarize_bout_stats(&days)?;
    eprintln!(
        "{} person-days from {} persons; {:.1}% without a bout; {} rejected days; {} persons without two valid days",
        summary.days,
        summary.persons,
        100.0 * summary.zero_day_fraction,
        load.rejected.len(),
        load.incomplete_persons.len()
    );
    Ok(())
}

pub fn preflight(a: &PreflightArgs, cfg: &Config) -> CliResult<()> {
    create_dir(&a.out)?;
    let days = bouts::load_days(&a.days)?;
    let rows = diagnose::preflight(&days, cfg.ingest.pair_cap)?;
    let path = a.out.join("preflight.csv");
    diagnose::write_preflight(&path, &rows)?;
    Manifest::new("preflight", None, &cfg.to_toml(), std::slice::from_ref(&a.days))?.finish(
        &a.out,
        "manifest_preflight.json",
        &[path],
    )?;
    for r in &rows {
        eprintln!("{:<32} stat {:>10.4} p {:>8.4} {}", r.check, r.statistic, r.p_value, r.note);
    }
    Ok(())
}

/// What `fit` leaves behind for the later stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitInfo {
    pub family: CountFamily,
    pub prior_preset: PriorPreset,
    pub prior: PriorConfig,
    pub chains: ChainConfig,
    pub design: DesignInfo,
    pub persons: usize,
}

struct Prepared {
    days: Vec<DayObservation>,
    records: Vec<CovariateRecord>,
    design: DesignMatrix,
    data: ModelData,
    removals: Vec<ingest::Removal>,
    imputation: ingest::Imputation,
}

/// Outlier removal, restriction to persons with both days and covariates,
/// imputation of `physical_job`, standardised design.
fn prepare(days_path: &Path, covariates_path: &Path, cfg: &Config) -> CliResult<Prepared> {
    let all_days = bouts::load_days(days_path)?;
    let (days, removals) = ingest::remove_outliers(&all_days, cfg.ingest.outlier_cap);
    let keep: HashSet<&str> = days.iter().map(|d| d.person_id.as_str()).collect();
    if keep.is_empty() {
        return Err(CliError::Usage("no person left after outlier removal".into()));
    }
    let records: Vec<CovariateRecord> = ingest::load_covariates(covariates_path)?
        .into_iter()
        .filter(|r| keep.contains(r.person_id.as_str()))
        .collect();
    let imputation = ingest::impute_physical_job(&records)?;
    if let Some(w) = &imputation.warning {
        eprintln!("warning: {w}");
    }
    let design = DesignMatrix::from_records(&imputation.records, &cfg.design.spec())?;
    let data = ModelData::new(&days, &design)?;
    Ok(Prepared {
        days,
        records: imputation.records.clone(),
        design,
        data,
        removals,
        imputation,
    })
}

fn write_atomic(path: &Path, text: &str) -> CliResult<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn fit(a: &FitArgs, cfg: &Config) -> CliResult<()> {
    create_dir(&a.out)?;
    let prep = prepare(&a.days, &a.covariates, cfg)?;
    let family = cfg.model.family;
    let prior = PriorConfig::preset(cfg.model.prior, prep.design.p());
    let chain_cfg = cfg.mcmc.chain_config(a.seed);
    let ckpt_path = a.out.join("checkpoint.json");

    let mut sampler = if a.resume {
        let ckpt: Checkpoint = read_json(&ckpt_path)?;
        if ckpt.config != chain_cfg || ckpt.family != family {
            return Err(CliError::Usage(
                "checkpoint was written with a different sampler configuration or seed".into(),
            ));
        }
        let s = Sampler::resume(&prep.data, ckpt, &prior)?;
        eprintln!("resuming at iteration {}", s.iteration());
        s
    } else {
        Sampler::new(&prep.data, &prior, family, chain_cfg.clone())?
    };
    let stop = a.stop_after.unwrap_or(chain_cfg.n_iter).min(chain_cfg.n_iter);
    while sampler.iteration() < stop {
        let next = (sampler.iteration() + cfg.mcmc.checkpoint_every).min(stop);
        sampler.advance(next)?;
        let text = serde_json::to_string(&sampler.checkpoint()).map_err(|e| CliError::format(&ckpt_path, e))?;
        write_atomic(&ckpt_path, &text)?;
        eprintln!("iteration {next}/{}", chain_cfg.n_iter);
    }
    if !sampler.is_done() {
        eprintln!("stopped at iteration {stop}; continue with --resume");
        return Ok(());
    }
    let draws = sampler.finish();

    let out = |name: &str| a.out.join(name);
    let outputs = vec![
        out("draws.csv"),
        out("draws.bin"),
        out("fit.json"),
        out("days_used.csv"),
        out("covariates_used.csv"),
        out("removals.csv"),
        out("imputation.csv"),
    ];
    let file = |p: &Path| std::fs::File::create(p).map_err(|e| CliError::io(p, e));
    write_draws_csv(&draws, std::io::BufWriter::new(file(&outputs[0])?))?;
    write_draws_binary(&draws, std::io::BufWriter::new(file(&outputs[1])?))?;
    write_json(
        &outputs[2],
        &FitInfo {
            family,
            prior_preset: cfg.model.prior,
            prior,
            chains: chain_cfg,
            design: prep.design.info.clone(),
            persons: prep.design.n(),
        },
    )?;
    bouts::write_days(&outputs[3], &prep.days)?;
    ingest::write_covariates(&outputs[4], &prep.records)?;
    ingest::write_removals(&outputs[5], &prep.removals)?;
    ingest::write_imputation_report(&outputs[6], &prep.imputation)?;
    Manifest::new("fit", Some(a.seed), &cfg.to_toml(), &[a.days.clone(), a.covariates.clone()])?.finish(
        &a.out,
        "manifest.json",
        &outputs,
    )?;
    eprintln!(
        "{} persons, {} removed, {} imputed; {} stored draws",
        prep.design.n(),
        prep.removals.len(),
        prep.imputation.imputed.len(),
        draws.total()
    );
    Ok(())
}

/// A completed fit read back from its directory.
struct LoadedFit {
    info: FitInfo,
    draws: PosteriorDraws,
    seed: u64,
}

fn load_fit(dir: &Path) -> CliResult<LoadedFit> {
    let info: FitInfo = read_json(&dir.join("fit.json"))?;
    let path = dir.join("draws.bin");
    let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let draws = read_draws_binary(std::io::BufReader::new(file))?;
    Ok(LoadedFit {
        seed: info.chains.seed,
        info,
        draws,
    })
}

fn fitted_data(dir: &Path, info: &FitInfo) -> CliResult<(DesignMatrix, ModelData)> {
    let records = ingest::load_covariates(&dir.join("covariates_used.csv"))?;
    let design = DesignMatrix::with_transforms(&records, &info.design.spec, info.design.transforms.clone())?;
    let days = bouts::load_days(&dir.join("days_used.csv"))?;
    let data = ModelData::new(&days, &design)?;
    Ok((design, data))
}

pub fn diagnose(a: &DiagnoseArgs, cfg: &Config) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    let fit = load_fit(&a.fit)?;
    let report = diagnose::convergence_report(&fit.draws)?;
    let path = out.join("convergence.csv");
    diagnose::write_convergence(&path, &report)?;
    Manifest::new("diagnose", None, &cfg.to_toml(), &[a.fit.join("draws.bin")])?.finish(
        &out,
        "manifest_diagnose.json",
        &[path],
    )?;
    let flagged: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| !(r.rhat_ok && r.mcse_ok))
        .map(|r| r.param.as_str())
        .collect();
    if flagged.is_empty() {
        eprintln!("all {} parameters pass R̂ < 1.05 and MCSE < 1.5% of SD", report.rows.len());
    } else {
        eprintln!("failing: {}", flagged.join(", "));
        if a.strict {
            return Err(mvpa_core::Error::Numeric(format!("convergence criteria not met for {}", flagged.join(", "))).into());
        }
    }
    Ok(())
}

pub fn assess(a: &AssessArgs, cfg: &Config) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    let fit = load_fit(&a.fit)?;
    let (_, data) = fitted_data(&a.fit, &fit.info)?;
    let seed = a.seed.unwrap_or(fit.seed);
    let m = cfg.assess.replicates;
    let main = assess::posterior_predictive_check(&fit.draws, &data, m, seed)?;
    let mut outputs = vec![out.join("ppc_report.csv")];
    assess::write_ppc_report(&outputs[0], &main)?;
    let mut reports: Vec<PpcReport> = vec![main];
    if cfg.assess.compare_nb && fit.info.family == CountFamily::GenPoisson {
        let nb_draws = assess::fit_negbin_variant(&data, &fit.info.prior, &fit.info.chains)?;
        let nb = assess::posterior_predictive_check(&nb_draws, &data, m, seed)?;
        let path = out.join("ppc_report_nb.csv");
        assess::write_ppc_report(&path, &nb)?;
        outputs.push(path);
        reports.push(nb);
    }
    let refs: Vec<&PpcReport> = reports.iter().collect();
    outputs.push(out.join("table4.csv"));
    assess::write_table4(outputs.last().expect("pushed"), &refs)?;
    outputs.push(out.join("table5.csv"));
    assess::write_table5(outputs.last().expect("pushed"), &refs)?;
    let inputs = [a.fit.join("draws.bin"), a.fit.join("days_used.csv"), a.fit.join("covariates_used.csv")];
    Manifest::new("assess", Some(seed), &cfg.to_toml(), &inputs)?.finish(&out, "manifest_assess.json", &outputs)?;
    for r in &reports {
        eprintln!(
            "{:?}: bout-combination χ² = {:.3} (df {}, p = {:.4})",
            r.family, r.chisq.statistic, r.chisq.df, r.chisq.p_value
        );
        for s in &r.stats {
            eprintln!("  {:<24} observed {:>10.4} ppp {:.3}", s.name, s.observed, s.ppp);
        }
    }
    Ok(())
}

fn load_weights(path: &Path, ids: &[String]) -> CliResult<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::format(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| CliError::format(path, e))?.iter().map(String::from).collect();
    if header != ["person_id", "weight"] {
        return Err(CliError::format(path, "expected header `person_id,weight`"));
    }
    let mut map = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let w: f64 = rec[1]
            .parse()
            .map_err(|_| CliError::format(path, format!("line {}: bad weight `{}`", k + 2, &rec[1])))?;
        map.insert(rec[0].to_string(), w);
    }
    ids.iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| CliError::format(path, format!("no weight for person {id}")))
        })
        .collect()
}

fn parse_populations(args: &[String]) -> CliResult<Vec<(String, Population)>> {
    if args.is_empty() {
        return Ok(usual::standard_populations()
            .into_iter()
            .map(|(n, p)| (n.to_string(), p))
            .collect());
    }
    args.iter()
        .map(|s| {
            let (name, expr) = match s.split_once('=') {
                Some((n, e)) if !n.contains(['<', '>', '!']) && !e.starts_with('=') => (n.trim(), e),
                _ => (s.trim(), s.as_str()),
            };
            Ok((name.to_string(), Population::parse(expr)?))
        })
        .collect()
}

pub fn usual(a: &UsualArgs, cfg: &Config) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.fit.clone());
    create_dir(&out)?;
    let fit = load_fit(&a.fit)?;
    let cov_path = a.covariates.clone().unwrap_or_else(|| a.fit.join("covariates_used.csv"));
    let records = ingest::impute_physical_job(&ingest::load_covariates(&cov_path)?)?.records;
    let design = DesignMatrix::with_transforms(&records, &fit.info.design.spec, fit.info.design.transforms.clone())?;
    let populations = parse_populations(&a.population)?;
    let weights = a.weights.as_ref().map(|p| load_weights(p, &design.person_ids)).transpose()?;

    let seed = a.seed.unwrap_or(fit.seed);
    let l = cfg.usual.draws.min(fit.draws.total());
    let draws = usual::simulate_t3(&fit.draws, &design, l, seed)?;
    let threshold = cfg.usual.threshold;
    let rows = usual::compliance_table(&draws, &design.records, &populations, weights.as_deref(), threshold)?;
    let mut outputs = vec![out.join("compliance.csv")];
    usual::write_compliance(&outputs[0], &rows, threshold)?;
    if draws.n_draws() >= usual::MIN_BAND_DRAWS {
        let grid = usual::default_grid(cfg.usual.grid_max, cfg.usual.grid_step);
        let bands = usual::density_bands(&draws, &grid)?;
        outputs.push(out.join("density.csv"));
        usual::write_density(&outputs[1], &bands, threshold)?;
    } else {
        eprintln!(
            "warning: only {} draws; density.csv needs at least {}",
            draws.n_draws(),
            usual::MIN_BAND_DRAWS
        );
    }
    let mut inputs: Vec<PathBuf> = vec![a.fit.join("draws.bin"), cov_path];
    inputs.extend(a.weights.iter().cloned());
    Manifest::new("usual", Some(seed), &cfg.to_toml(), &inputs)?.finish(&out, "manifest_usual.json", &outputs)?;
    for r in &rows {
        eprintln!(
            "{:<16} n={:<5} compliance {:.3} ({:.3}, {:.3})",
            r.population, r.persons, r.mean, r.lower, r.upper
        );
    }
    Ok(())
}
