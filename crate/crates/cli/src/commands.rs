use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context as _, Result};
use log::{info, warn};
use speechground::corpus::{
    balance_registers, compute_stats, drop_unusable, filter_utterances, parse_manifest, render_stats_table,
    split_corpus, write_split_manifests, Register, SplitSpec, Utterance,
};
use speechground::embeddings::{read_embedding_header, read_embeddings, EmbeddingSet};
use speechground::encoder::{load_checkpoint, SpeechEncoder};
use speechground::features::{
    cache_path, load_audio, mfcc, probe_wav, read_feature_cache, write_feature_cache, FeatureMatrix,
};
use speechground::retrieval::{
    evaluate, evaluate_cross_register, render_trajectory_svg, trajectory_report, write_reports_csv,
    write_trajectory_curves, RankingReport, SeedModels,
};
use speechground::training::{read_trajectory, Dataset, RetrievalValidator, Trainer};

use crate::config::ExperimentConfig;

const SPLIT_PARTS: [&str; 3] = ["train", "val", "test"];

/// Resolved configuration plus the output layout.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub dry_run: bool,
}

impl Context {
    fn splits_dir(&self) -> PathBuf {
        self.out_dir.join("splits")
    }

    fn split_path(&self, register: Register, part: &str) -> PathBuf {
        self.splits_dir().join(format!("{register}.{part}"))
    }

    fn features_dir(&self) -> PathBuf {
        self.out_dir.join(&self.cfg.feature_cache)
    }

    fn run_dir(&self, register: Register, seed: u64) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(register.as_str())
            .join(format!("seed_{seed}"))
    }

    fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    fn create_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
    }

    fn load_split(&self, register: Register, part: &str) -> Result<Vec<Utterance>> {
        let path = self.split_path(register, part);
        ensure!(path.is_file(), "{} does not exist; run `ingest` first", path.display());
        Ok(parse_manifest(&path)?)
    }

    fn audio_path(&self, u: &Utterance) -> PathBuf {
        let p = Path::new(&u.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.cfg.audio_root.join(p)
        }
    }

    fn embeddings_path(&self) -> Result<&Path> {
        self.cfg.embeddings.as_deref().context("paths.embeddings is not set")
    }

    /// Check the embedding file header against `encoder.embed_dim`.
    fn check_embedding_header(&self) -> Result<()> {
        let path = self.embeddings_path()?;
        let (dim, count) = read_embedding_header(path)?;
        ensure!(
            dim == self.cfg.encoder.embed_dim,
            "{}: embedding dimension {dim} does not match encoder.embed_dim = {}",
            path.display(),
            self.cfg.encoder.embed_dim
        );
        info!("{}: {count} embeddings of dimension {dim}", path.display());
        Ok(())
    }

    fn load_targets(&self) -> Result<EmbeddingSet> {
        self.check_embedding_header()?;
        Ok(read_embeddings(self.embeddings_path()?)?)
    }

    fn load_features(&self, utts: &[Utterance]) -> Result<Vec<FeatureMatrix>> {
        let ids: Vec<String> = utts.iter().map(|u| u.id.clone()).collect();
        Dataset::load_features(&ids, self.features_dir(), Some(self.cfg.mfcc.digest()))
            .context("feature cache is incomplete or stale; run `featurize`")
    }

    fn check_features_exist(&self, utts: &[Utterance]) -> Result<()> {
        let dir = self.features_dir();
        let missing: Vec<&str> = utts
            .iter()
            .filter(|u| !cache_path(&dir, &u.id).is_file())
            .map(|u| u.id.as_str())
            .collect();
        ensure!(
            missing.is_empty(),
            "{} of {} utterances have no cached features in {} (first: {}); run `featurize`",
            missing.len(),
            utts.len(),
            dir.display(),
            missing.iter().take(5).copied().collect::<Vec<_>>().join(", ")
        );
        Ok(())
    }

    fn best_checkpoint(&self, register: Register, seed: u64) -> PathBuf {
        self.run_dir(register, seed).join("best.sgck")
    }

    fn load_best(&self, register: Register, seed: u64) -> Result<SpeechEncoder<f32>> {
        let path = self.best_checkpoint(register, seed);
        ensure!(path.is_file(), "{} does not exist; run `train` first", path.display());
        let encoder = load_checkpoint(&path)?.encoder;
        if encoder.config().embed_dim != self.cfg.encoder.embed_dim {
            bail!(
                "{}: checkpoint embed_dim {} differs from encoder.embed_dim = {}",
                path.display(),
                encoder.config().embed_dim,
                self.cfg.encoder.embed_dim
            );
        }
        Ok(encoder)
    }
}

/// Parse, filter and (optionally) balance the raw manifests.
fn prepare_corpus(ctx: &Context) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let cfg = &ctx.cfg;
    ensure!(!cfg.manifests.is_empty(), "paths.manifests is not set");
    let mut all = Vec::new();
    let mut seen = HashSet::new();
    for path in &cfg.manifests {
        for u in parse_manifest(path)? {
            ensure!(
                seen.insert(u.id.clone()),
                "{}: utterance id {:?} also appears in an earlier manifest",
                path.display(),
                u.id
            );
            all.push(u);
        }
    }
    let n_raw = all.len();
    let kept = drop_unusable(filter_utterances(&all, cfg.corpus.keep_role));
    info!("{} of {n_raw} utterances kept after speaker filtering", kept.len());
    let (cds, ads): (Vec<Utterance>, Vec<Utterance>) = kept.into_iter().partition(|u| u.register == Register::Cds);
    if !cfg.corpus.balance {
        return Ok((cds, ads));
    }
    ensure!(
        !cds.is_empty() && !ads.is_empty(),
        "balancing needs both registers ({} CDS, {} ADS utterances); set corpus.balance = false",
        cds.len(),
        ads.len()
    );
    let (cds, ads) = balance_registers(&cds, &ads, cfg.corpus.balance_seed);
    info!("balanced to {} utterances per register", cds.len());
    Ok((cds, ads))
}

fn register_slice(cds: Vec<Utterance>, ads: Vec<Utterance>, register: Register) -> Vec<Utterance> {
    match register {
        Register::Cds => cds,
        Register::Ads => ads,
    }
}

pub fn ingest(ctx: &Context) -> Result<()> {
    let (cds, ads) = prepare_corpus(ctx)?;
    let c = &ctx.cfg.corpus;
    let spec = SplitSpec::new(c.split_seed, c.n_validation, c.n_test);
    let mut planned = Vec::new();
    for &register in &ctx.cfg.registers {
        let utts = register_slice(cds.clone(), ads.clone(), register);
        let splits = split_corpus(&utts, &spec).with_context(|| format!("cannot split the {register} corpus"))?;
        planned.push((register, splits));
    }
    if !ctx.dry_run {
        ctx.create_dir(&ctx.splits_dir())?;
    }
    for (register, splits) in &planned {
        println!(
            "{register}: train {}, validation {}, test {}",
            splits.train.len(),
            splits.validation.len(),
            splits.test.len()
        );
        if !ctx.dry_run {
            write_split_manifests(ctx.splits_dir(), register.as_str(), splits)?;
        }
    }
    Ok(())
}

pub fn stats(ctx: &Context) -> Result<()> {
    let (cds, ads) = prepare_corpus(ctx)?;
    if ctx.dry_run {
        println!("{} CDS and {} ADS utterances", cds.len(), ads.len());
        return Ok(());
    }
    let mut columns = Vec::new();
    for (name, utts) in [("CDS", &cds), ("ADS", &ads)] {
        if utts.is_empty() {
            warn!("no {name} utterances; column omitted");
            continue;
        }
        columns.push((name, compute_stats(utts)?));
    }
    ensure!(!columns.is_empty(), "the corpus is empty after filtering");
    let refs: Vec<(&str, &_)> = columns.iter().map(|(n, s)| (*n, s)).collect();
    let table = render_stats_table(&refs);
    ctx.create_dir(&ctx.out_dir)?;
    write_file(&ctx.out_dir.join("stats.txt"), &table)?;
    let json: serde_json::Map<String, serde_json::Value> = columns
        .iter()
        .map(|(n, s)| Ok((n.to_lowercase(), serde_json::to_value(s)?)))
        .collect::<Result<_>>()?;
    write_file(&ctx.out_dir.join("stats.json"), &serde_json::to_string_pretty(&json)?)?;
    print!("{table}");
    Ok(())
}

fn all_split_utterances(ctx: &Context) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for &register in &ctx.cfg.registers {
        for part in SPLIT_PARTS {
            out.extend(ctx.load_split(register, part)?);
        }
    }
    Ok(out)
}

pub fn featurize(ctx: &Context) -> Result<()> {
    let utts = all_split_utterances(ctx)?;
    if ctx.dry_run {
        let mut bad = Vec::new();
        for u in &utts {
            if let Err(e) = probe_wav(ctx.audio_path(u)) {
                bad.push(format!("{}: {e}", u.id));
            }
        }
        report_failures(&bad, utts.len(), "audio files are unreadable")?;
        println!("{} audio headers checked", utts.len());
        return Ok(());
    }
    let dir = ctx.features_dir();
    ctx.create_dir(&dir)?;
    let digest = ctx.cfg.mfcc.digest();
    let next = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(utts.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(u) = utts.get(i) else { break };
                let path = cache_path(&dir, &u.id);
                if read_feature_cache(&path, Some(digest)).is_ok_and(|fm| fm.utterance_id() == u.id) {
                    skipped.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
                let result = load_audio(ctx.audio_path(u))
                    .and_then(|audio| mfcc(&audio, &ctx.cfg.mfcc))
                    .and_then(|fm| write_feature_cache(&fm.with_id(u.id.clone()), &path));
                if let Err(e) = result {
                    failures.lock().unwrap().push(format!("{}: {e}", u.id));
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort();
    report_failures(&failures, utts.len(), "utterances could not be featurized")?;
    let skipped = skipped.into_inner();
    println!(
        "{} utterances featurized, {skipped} already cached",
        utts.len() - skipped
    );
    Ok(())
}

fn report_failures(failures: &[String], total: usize, what: &str) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures.iter().take(10) {
        log::error!("{f}");
    }
    bail!("{} of {total} {what}; first: {}", failures.len(), failures[0])
}

fn check_coverage(targets_path: &Path, targets: &EmbeddingSet, utts: &[Utterance]) -> Result<()> {
    targets
        .check_coverage(utts.iter().map(|u| u.id.as_str()))
        .with_context(|| format!("{} does not cover the split", targets_path.display()))
}

pub fn train(ctx: &Context, resume: bool) -> Result<()> {
    let targets = ctx.load_targets()?;
    let targets_path = ctx.embeddings_path()?;
    for &register in &ctx.cfg.registers {
        let train_utts = ctx.load_split(register, "train")?;
        let val_utts = ctx.load_split(register, "val")?;
        check_coverage(targets_path, &targets, &train_utts)?;
        check_coverage(targets_path, &targets, &val_utts)?;
        if ctx.dry_run {
            ctx.check_features_exist(&train_utts)?;
            ctx.check_features_exist(&val_utts)?;
            println!(
                "{register}: {} training and {} validation utterances, {} seeds",
                train_utts.len(),
                val_utts.len(),
                ctx.cfg.seeds.len()
            );
            continue;
        }
        let train_feats = ctx.load_features(&train_utts)?;
        let val_feats = ctx.load_features(&val_utts)?;
        let data = Dataset::new(&train_feats, &targets)?;
        for &seed in &ctx.cfg.seeds {
            let run_dir = ctx.run_dir(register, seed);
            ctx.create_dir(&run_dir)?;
            let train_cfg = ctx.cfg.train_for_seed(seed, run_dir.clone());
            let latest = if resume { latest_checkpoint(&run_dir)? } else { None };
            let mut trainer = match latest {
                Some(path) => {
                    let ck = load_checkpoint(&path)?;
                    let mut expected = ctx.cfg.encoder_for_seed(seed);
                    expected.init_seed = ck.encoder.config().init_seed;
                    ensure!(
                        *ck.encoder.config() == expected,
                        "{}: checkpoint was trained with different encoder settings",
                        path.display()
                    );
                    info!("{register} seed {seed}: resuming from {}", path.display());
                    Trainer::from_checkpoint(ck, train_cfg)?
                }
                None => {
                    clear_run_dir(&run_dir)?;
                    Trainer::new(SpeechEncoder::new(ctx.cfg.encoder_for_seed(seed))?, train_cfg)?
                }
            };
            write_file(&run_dir.join("config.txt"), &ctx.cfg.to_text())?;
            let mut validator = RetrievalValidator {
                items: &val_feats,
                targets: &targets,
            };
            let report = trainer.fit(&data, &mut validator)?;
            println!(
                "{register} seed {seed}: best epoch {} (validation recall@1 {:.3})",
                report.best_epoch, report.best_val_recall1
            );
        }
    }
    Ok(())
}

fn epoch_of(path: &Path) -> Option<usize> {
    path.file_name()?
        .to_str()?
        .strip_prefix("epoch_")?
        .strip_suffix(".sgck")?
        .parse()
        .ok()
}

fn run_files(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run_dir).with_context(|| format!("cannot list {}", run_dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        out.push(
            entry
                .with_context(|| format!("cannot list {}", run_dir.display()))?
                .path(),
        );
    }
    Ok(out)
}

fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    Ok(run_files(run_dir)?
        .into_iter()
        .filter_map(|p| epoch_of(&p).map(|e| (e, p)))
        .max_by_key(|(e, _)| *e)
        .map(|(_, p)| p))
}

/// Remove the outputs of an earlier run so a fresh run leaves no stale epochs.
fn clear_run_dir(run_dir: &Path) -> Result<()> {
    for path in run_files(run_dir)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if epoch_of(&path).is_some() || name == "best.sgck" || name == "trajectory.csv" {
            fs::remove_file(&path).with_context(|| format!("cannot remove {}", path.display()))?;
        }
    }
    Ok(())
}

fn check_checkpoints(ctx: &Context, registers: &[Register]) -> Result<()> {
    for &register in registers {
        for &seed in &ctx.cfg.seeds {
            let path = ctx.best_checkpoint(register, seed);
            ensure!(path.is_file(), "{} does not exist; run `train` first", path.display());
        }
    }
    Ok(())
}

pub fn evaluate_runs(ctx: &Context) -> Result<()> {
    let targets = ctx.load_targets()?;
    let targets_path = ctx.embeddings_path()?;
    let mut rows = Vec::new();
    for &register in &ctx.cfg.registers {
        let test_utts = ctx.load_split(register, "test")?;
        check_coverage(targets_path, &targets, &test_utts)?;
        if ctx.dry_run {
            ctx.check_features_exist(&test_utts)?;
            continue;
        }
        let test = ctx.load_features(&test_utts)?;
        let mut per_seed = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let encoder = ctx.load_best(register, seed)?;
            per_seed.push(evaluate(&encoder, &test, &targets, &format!("{register}/seed_{seed}"))?);
        }
        let mut mean = RankingReport::mean(&per_seed).expect("at least one seed");
        mean.test_set = format!("{register}/mean");
        rows.extend(per_seed);
        rows.push(mean);
    }
    if ctx.dry_run {
        check_checkpoints(ctx, &ctx.cfg.registers)?;
        println!("evaluation inputs are complete");
        return Ok(());
    }
    let dir = ctx.reports_dir();
    ctx.create_dir(&dir)?;
    write_reports_csv(dir.join("evaluate.csv"), &rows)?;
    let table = render_reports(&rows);
    write_file(&dir.join("evaluate.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn render_reports(rows: &[RankingReport]) -> String {
    let mut out = format!(
        "{:<16}{:>6}{:>8}{:>8}{:>8}{:>9}\n",
        "Run", "N", "R@1", "R@5", "R@10", "Med.r"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16}{:>6}{:>8.3}{:>8.3}{:>8.3}{:>9.2}\n",
            r.test_set, r.n_candidates, r.recall1, r.recall5, r.recall10, r.median_rank
        ));
    }
    out
}

pub fn cross_eval(ctx: &Context) -> Result<()> {
    let registers = &ctx.cfg.registers;
    ensure!(
        registers.contains(&Register::Cds) && registers.contains(&Register::Ads),
        "cross-eval needs both registers in `registers`"
    );
    let targets = ctx.load_targets()?;
    let targets_path = ctx.embeddings_path()?;
    let cds_utts = ctx.load_split(Register::Cds, "test")?;
    let ads_utts = ctx.load_split(Register::Ads, "test")?;
    check_coverage(targets_path, &targets, &cds_utts)?;
    check_coverage(targets_path, &targets, &ads_utts)?;
    if ctx.dry_run {
        ctx.check_features_exist(&cds_utts)?;
        ctx.check_features_exist(&ads_utts)?;
        check_checkpoints(ctx, &Register::ALL)?;
        println!("cross-register inputs are complete");
        return Ok(());
    }
    let cds_test = ctx.load_features(&cds_utts)?;
    let ads_test = ctx.load_features(&ads_utts)?;
    let mut encoders = Vec::new();
    for &seed in &ctx.cfg.seeds {
        encoders.push((
            seed,
            ctx.load_best(Register::Cds, seed)?,
            ctx.load_best(Register::Ads, seed)?,
        ));
    }
    let models: Vec<SeedModels> = encoders
        .iter()
        .map(|(seed, cds, ads)| SeedModels { seed: *seed, cds, ads })
        .collect();
    let matrix = evaluate_cross_register(&models, &cds_test, &ads_test, &targets)?;
    let dir = ctx.reports_dir();
    ctx.create_dir(&dir)?;
    matrix.write_csvs(&dir)?;
    let table = matrix.render_table();
    write_file(&dir.join("cross_register.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn trajectory(ctx: &Context) -> Result<()> {
    let mut groups = Vec::new();
    for &register in &ctx.cfg.registers {
        let mut logs = Vec::new();
        for &seed in &ctx.cfg.seeds {
            let path = ctx.run_dir(register, seed).join("trajectory.csv");
            ensure!(path.is_file(), "{} does not exist; run `train` first", path.display());
            let mut log = read_trajectory(&path)?;
            if let Some(max) = ctx.cfg.trajectory_max_epoch {
                log.retain(|r| r.epoch <= max);
            }
            logs.push(log);
        }
        groups.push((register.as_str().to_uppercase(), logs));
    }
    let curves = trajectory_report(&groups)?;
    if ctx.dry_run {
        println!("{} trajectory logs are consistent", groups.len() * ctx.cfg.seeds.len());
        return Ok(());
    }
    let dir = ctx.reports_dir();
    ctx.create_dir(&dir)?;
    write_trajectory_curves(dir.join("trajectory.csv"), &curves)?;
    write_file(&dir.join("trajectory.svg"), &render_trajectory_svg(&curves))?;
    println!(
        "wrote {} and {}",
        dir.join("trajectory.csv").display(),
        dir.join("trajectory.svg").display()
    );
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}
