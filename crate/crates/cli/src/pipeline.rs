//! Pipeline stages. Each reads the artifacts of earlier stages from the
//! output directory and writes its own, plus a provenance file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fleeting::data::{corpus_files, ingest, TokenStream};
use fleeting::freq_analysis::{self, mean_squared_error, quintile_partition, under_over_sse_in, QUINTILES};
use fleeting::io::{write_atomic, write_json};
use fleeting::minimal_pairs::{read_pairs_jsonl, score_pairs};
use fleeting::stats::{self, bootstrap_t_test, paired_diffs, MetricRow, StatsReport};
use fleeting::surprisal_rt::{
    attach_surprisal, complete_records, read_rt_csv, residuals_csv, rt_report, FrequencyTable,
    Provenance as FillProvenance, ReadingTimeRecord,
};
use fleeting::tokenizer::{train_bpe, BpeVocab};
use fleeting::training::{
    cell_dir_name, run_grid, ExperimentGrid, GridOptions, TrainState,
};
use fleeting::{plot, Condition, Error, ModelState, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metrics with a slope chart; the per-quintile ones are tested but not drawn.
const CHARTED: [&str; 3] = ["val_loss", "pair_acc", "delta_ll"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceFile {
    pub stage: String,
    pub manifest_hash: String,
    pub vocab_hash: Option<String>,
    pub code_version: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub condition: Condition,
    pub seed: u64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStatus {
    pub cells: Vec<CellStatus>,
}

/// What a stage did, for the exit code and the notice on stderr.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub failed: Vec<String>,
    pub attempted: usize,
    pub notes: Vec<String>,
}

impl Outcome {
    fn wrote(&mut self, p: PathBuf) {
        self.written.push(p);
    }
}

pub struct Pipeline {
    pub manifest: Manifest,
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Pipeline {
    pub fn new(manifest: Manifest) -> Self {
        Self { manifest }
    }

    pub fn out(&self) -> &Path {
        &self.manifest.paths.out
    }

    fn tokenizer_dir(&self) -> PathBuf {
        self.out().join("tokenizer")
    }

    fn tokens_path(&self) -> PathBuf {
        self.out().join("data").join("tokens.bin")
    }

    fn metrics_dir(&self) -> PathBuf {
        self.out().join("metrics")
    }

    fn provenance(&self, dir: &Path, stage: &str, vocab_hash: Option<String>) -> Result<PathBuf> {
        let p = dir.join("provenance.json");
        write_json(
            &p,
            &ProvenanceFile {
                stage: stage.into(),
                manifest_hash: self.manifest.hash.clone(),
                vocab_hash,
                code_version: CODE_VERSION.into(),
                seeds: self.manifest.grid.seeds.clone(),
            },
        )?;
        Ok(p)
    }

    pub fn vocab(&self) -> Result<BpeVocab> {
        BpeVocab::load(&self.tokenizer_dir())
    }

    fn corpus_text(&self) -> Result<String> {
        let mut text = String::new();
        for f in corpus_files(&self.manifest.paths.corpus)? {
            let s = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            text.push_str(&s);
            text.push('\n');
        }
        Ok(text)
    }

    pub fn tokenize(&self) -> Result<Outcome> {
        let corpus = self.corpus_text()?;
        let vocab = train_bpe(corpus.as_bytes(), self.manifest.tokenizer.vocab_size)?;
        let dir = self.tokenizer_dir();
        vocab.save(&dir)?;
        let mut o = Outcome::default();
        if vocab.len() < self.manifest.tokenizer.vocab_size {
            o.notes.push(format!(
                "corpus exhausted merge candidates at {} entries (requested {})",
                vocab.len(),
                self.manifest.tokenizer.vocab_size
            ));
        }
        o.wrote(dir.join("merges.txt"));
        o.wrote(dir.join("vocab.json"));
        o.wrote(self.provenance(&dir, "tokenize", Some(vocab.hash()))?);
        Ok(o)
    }

    pub fn ingest(&self) -> Result<Outcome> {
        let vocab = self.vocab()?;
        let stream = ingest(&self.manifest.paths.corpus, &vocab)?;
        let path = self.tokens_path();
        stream.save_cache(&path)?;
        let mut o = Outcome::default();
        o.notes.push(format!("{} tokens from {} files", stream.len(), stream.sources.len()));
        o.wrote(path.clone());
        o.wrote(path.with_extension("json"));
        o.wrote(self.provenance(path.parent().unwrap(), "ingest", Some(vocab.hash()))?);
        Ok(o)
    }

    fn stream(&self) -> Result<(BpeVocab, TokenStream)> {
        let vocab = self.vocab()?;
        let stream = TokenStream::load_cache(&self.tokens_path())?;
        if stream.vocab_hash != vocab.hash() {
            return Err(Error::domain(
                "token cache was built with a different tokenizer; rerun ingest",
            ));
        }
        Ok((vocab, stream))
    }

    /// One run, for a manifest (or overrides) naming a single cell.
    pub fn train(&self) -> Result<Outcome> {
        let g = &self.manifest.grid;
        if g.conditions.len() != 1 || g.seeds.len() != 1 {
            return Err(Error::domain(format!(
                "train runs one cell; got {} conditions × {} seeds (use --condition and --seed, or grid)",
                g.conditions.len(),
                g.seeds.len()
            )));
        }
        let (vocab, stream) = self.stream()?;
        let spec = self.manifest.run_spec(g.conditions[0], g.seeds[0], vocab.len());
        let dir = self.out().join("runs").join(cell_dir_name(&spec.condition, spec.seed));
        let started = std::time::Instant::now();
        let mut state = TrainState::new(spec.clone())?;
        state.run_to(&stream, spec.steps)?;
        let ckpt = dir.join("checkpoint.bin");
        state.save(&ckpt)?;
        let result = state.result(started, Some(ckpt.clone()));
        write_json(&dir.join("result.json"), &result)?;
        write_json(&dir.join("spec.json"), &spec)?;
        let mut o = Outcome {
            attempted: 1,
            ..Default::default()
        };
        o.notes.push(format!("final validation loss {:.6}", result.final_val_loss));
        o.wrote(ckpt);
        o.wrote(self.provenance(&dir, "train", Some(vocab.hash()))?);
        Ok(o)
    }

    pub fn grid(&self) -> Result<Outcome> {
        let (vocab, stream) = self.stream()?;
        let m = &self.manifest;
        let grid = ExperimentGrid {
            conditions: m.grid.conditions.clone(),
            seeds: m.grid.seeds.clone(),
            base: m.run_spec(m.grid.conditions[0], m.grid.seeds[0], vocab.len()),
        };
        let results = run_grid(
            &grid,
            &stream,
            &GridOptions {
                jobs: m.training.jobs,
                out: Some(self.out().to_path_buf()),
            },
        )?;
        let mut o = Outcome {
            attempted: results.cells.len(),
            ..Default::default()
        };
        let mut status = Vec::new();
        let mut loss_rows = Vec::new();
        for c in &results.cells {
            match &c.outcome {
                Ok(r) => {
                    if c.reused {
                        o.notes.push(format!("{} seed {}: up to date, reused", c.condition, c.seed));
                    }
                    loss_rows.push(MetricRow {
                        seed: c.seed,
                        condition: c.condition.to_string(),
                        metric: "val_loss".into(),
                        value: r.final_val_loss,
                    });
                }
                Err(e) => o.failed.push(format!("{} seed {}: {e}", c.condition, c.seed)),
            }
            status.push(CellStatus {
                condition: c.condition,
                seed: c.seed,
                ok: c.outcome.is_ok(),
                error: c.outcome.as_ref().err().cloned(),
            });
        }
        let out = self.out();
        write_atomic(&out.join("results.csv"), results.to_csv()?.as_bytes())?;
        write_json(&out.join("grid.json"), &GridStatus { cells: status })?;
        write_atomic(&self.metrics_dir().join("loss.csv"), stats::metrics_csv(&loss_rows)?.as_bytes())?;
        o.wrote(out.join("results.csv"));
        o.wrote(out.join("grid.json"));
        o.wrote(self.metrics_dir().join("loss.csv"));
        o.wrote(self.provenance(out, "grid", Some(vocab.hash()))?);
        Ok(o)
    }

    /// Completed cells from the last grid, in canonical order.
    pub fn cells(&self) -> Result<Vec<(Condition, u64)>> {
        let status: GridStatus = read_json(&self.out().join("grid.json"))?;
        Ok(status.cells.into_iter().filter(|c| c.ok).map(|c| (c.condition, c.seed)).collect())
    }

    fn load_model(&self, condition: &Condition, seed: u64) -> Result<ModelState> {
        let path = self.out().join("runs").join(cell_dir_name(condition, seed)).join("checkpoint.bin");
        Ok(TrainState::load(&path)?.model)
    }

    /// Runs `f` for every completed cell; failures are recorded per cell.
    fn per_cell<F>(&self, o: &mut Outcome, mut f: F) -> Result<()>
    where
        F: FnMut(&Condition, u64) -> Result<()>,
    {
        let cells = self.cells()?;
        for (c, s) in cells {
            o.attempted += 1;
            if let Err(e) = f(&c, s) {
                o.failed.push(format!("{c} seed {s}: {e}"));
            }
        }
        Ok(())
    }

    pub fn eval_pairs(&self) -> Result<Outcome> {
        let vocab = self.vocab()?;
        let files: Vec<(String, Vec<_>)> = self
            .manifest
            .evaluation
            .pairs
            .iter()
            .map(|p| Ok((file_stem(p), read_pairs_jsonl(p)?)))
            .collect::<Result<_>>()?;
        let dir = self.out().join("pairs");
        let mut rows = Vec::new();
        let mut o = Outcome::default();
        self.per_cell(&mut o, |c, s| {
            let model = self.load_model(c, s)?;
            for (name, pairs) in &files {
                let report = score_pairs(&model, &vocab, c, pairs)?;
                let path = dir.join(name).join(format!("{}.csv", cell_dir_name(c, s)));
                write_atomic(&path, report.to_csv()?.as_bytes())?;
                rows.push(MetricRow {
                    seed: s,
                    condition: c.to_string(),
                    metric: format!("pair_acc:{name}"),
                    value: report.overall,
                });
            }
            Ok(())
        })?;
        write_atomic(&self.metrics_dir().join("pairs.csv"), stats::metrics_csv(&rows)?.as_bytes())?;
        o.wrote(self.metrics_dir().join("pairs.csv"));
        o.wrote(self.provenance(&dir, "eval-pairs", Some(vocab.hash()))?);
        Ok(o)
    }

    fn frequency_table(&self) -> Result<FrequencyTable> {
        Ok(FrequencyTable::from_text(&self.corpus_text()?))
    }

    pub fn surprisal(&self) -> Result<Outcome> {
        let vocab = self.vocab()?;
        // Used only for rows without a frequency column.
        let freq = self.frequency_table()?;
        let mut sources = Vec::new();
        for r in &self.manifest.evaluation.reading_times {
            let raw = read_rt_csv(&r.path, &r.columns.resolve()?)?;
            let (records, fill) = complete_records(raw, Some(&freq))?;
            let dir = self.out().join("surprisal").join(&r.name);
            write_json(&dir.join("fill.json"), &fill)?;
            sources.push((dir, records));
        }
        let mut o = Outcome::default();
        self.per_cell(&mut o, |c, s| {
            let model = self.load_model(c, s)?;
            for (dir, records) in &sources {
                let mut records = records.clone();
                attach_surprisal(&mut records, &model, &vocab, c)?;
                let path = dir.join(format!("{}.csv", cell_dir_name(c, s)));
                write_atomic(&path, csv_string(&records)?.as_bytes())?;
            }
            Ok(())
        })?;
        for (dir, _) in &sources {
            o.wrote(self.provenance(dir, "surprisal", Some(vocab.hash()))?);
        }
        Ok(o)
    }

    pub fn rt_fit(&self) -> Result<Outcome> {
        let mut o = Outcome::default();
        let mut rows = Vec::new();
        let sources = &self.manifest.evaluation.reading_times;
        let names: Vec<String> = sources.iter().map(|r| r.name.clone()).collect();
        self.per_cell(&mut o, |c, s| {
            for (name, source) in names.iter().zip(sources) {
                let src = self.out().join("surprisal").join(name);
                let fill: FillProvenance = read_json(&src.join("fill.json"))?;
                let records: Vec<ReadingTimeRecord> =
                    read_csv(&src.join(format!("{}.csv", cell_dir_name(c, s))))?;
                let records = source.exclude.apply(&records);
                let (report, fit) = rt_report(&records, fill)?;
                let dir = self.out().join("rt").join(name);
                let cell = cell_dir_name(c, s);
                write_json(&dir.join(format!("{cell}.json")), &report)?;
                write_atomic(
                    &dir.join(format!("{cell}.residuals.csv")),
                    residuals_csv(&records, &fit)?.as_bytes(),
                )?;
                rows.push(MetricRow {
                    seed: s,
                    condition: c.to_string(),
                    metric: format!("delta_ll:{name}"),
                    value: report.delta_ll,
                });
            }
            Ok(())
        })?;
        write_atomic(&self.metrics_dir().join("rt.csv"), stats::metrics_csv(&rows)?.as_bytes())?;
        o.wrote(self.metrics_dir().join("rt.csv"));
        for name in &names {
            o.wrote(self.provenance(&self.out().join("rt").join(name), "rt-fit", None)?);
        }
        Ok(o)
    }

    /// Quintiles are fixed once per corpus on the baseline's residual
    /// table; every cell is normalised by its own seed's baseline error.
    pub fn freq_analysis(&self) -> Result<Outcome> {
        let baseline = self.manifest.evaluation.baseline;
        let cells = self.cells()?;
        let mut o = Outcome::default();
        let mut rows = Vec::new();
        for r in &self.manifest.evaluation.reading_times {
            let rt_dir = self.out().join("rt").join(&r.name);
            let dir = self.out().join("freq").join(&r.name);
            let load = |c: &Condition, s: u64| {
                freq_analysis::read_residuals_csv(&rt_dir.join(format!("{}.residuals.csv", cell_dir_name(c, s))))
            };
            let mut groups = None;
            for &(c, s) in &cells {
                o.attempted += 1;
                let res = (|| -> Result<()> {
                    let reference = mean_squared_error(&load(&baseline, s)?);
                    let records = load(&c, s)?;
                    let g = match &groups {
                        Some(g) => g,
                        None => groups.insert(quintile_partition(&load(&baseline, s)?)?),
                    };
                    if g.iter().map(Vec::len).sum::<usize>() != records.len() {
                        return Err(Error::domain("residual tables differ in length across cells"));
                    }
                    let report = under_over_sse_in(&records, g, reference)?;
                    write_atomic(
                        &dir.join(format!("{}.csv", cell_dir_name(&c, s))),
                        report.to_csv()?.as_bytes(),
                    )?;
                    for q in &report.rows {
                        rows.push(MetricRow {
                            seed: s,
                            condition: c.to_string(),
                            metric: format!("mse_q{}:{}", q.quintile, r.name),
                            value: q.mse,
                        });
                    }
                    Ok(())
                })();
                if let Err(e) = res {
                    o.failed.push(format!("{} {c} seed {s}: {e}", r.name));
                }
            }
            o.wrote(self.provenance(&dir, "freq-analysis", None)?);
        }
        write_atomic(&self.metrics_dir().join("freq.csv"), stats::metrics_csv(&rows)?.as_bytes())?;
        o.wrote(self.metrics_dir().join("freq.csv"));
        Ok(o)
    }

    /// Every metric row under `metrics/`, files in name order.
    pub fn metric_rows(&self) -> Result<Vec<MetricRow>> {
        let dir = self.metrics_dir();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut rows = Vec::new();
        for f in files {
            rows.extend(stats::read_metrics_csv(&f)?);
        }
        Ok(rows)
    }

    /// Paired tests of every non-baseline condition against the baseline,
    /// for every metric in `rows`.
    pub fn stats(&self, rows: &[MetricRow]) -> Result<(Outcome, Vec<StatsReport>)> {
        let e = &self.manifest.evaluation;
        let base = e.baseline.to_string();
        let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
        metrics.sort_unstable();
        metrics.dedup();
        let conditions: Vec<Condition> = self
            .manifest
            .grid
            .conditions
            .iter()
            .filter(|c| **c != e.baseline)
            .copied()
            .collect();
        let dir = self.out().join("stats");
        let mut o = Outcome::default();
        let mut reports = Vec::new();
        for metric in &metrics {
            for cond in &conditions {
                o.attempted += 1;
                let comparison = format!("{cond} - {base}");
                let res = paired_diffs(rows, metric, &cond.to_string(), &base)
                    .and_then(|d| Ok((bootstrap_t_test(&d, e.n_boot, e.stats_seed)?, d)));
                match res {
                    Ok((r, d)) => {
                        let report = StatsReport::new(&d, &comparison, &r);
                        let name = format!("{}__{}.json", metric.replace(':', "_"), cond.slug());
                        write_json(&dir.join(name), &report)?;
                        reports.push(report);
                    }
                    Err(err) => o.failed.push(format!("{metric} ({comparison}): {err}")),
                }
            }
        }
        write_atomic(&dir.join("stats.csv"), stats_csv(&reports)?.as_bytes())?;
        o.wrote(dir.join("stats.csv"));
        o.wrote(self.provenance(&dir, "stats", None)?);
        Ok((o, reports))
    }

    pub fn plot(&self) -> Result<Outcome> {
        let dir = self.out().join("figures");
        let mut o = Outcome::default();
        let m = &self.manifest;
        let svg = plot::retention_curves("Retention by distance", m.model.context, &m.grid.conditions)?;
        write_atomic(&dir.join("retention.svg"), svg.as_bytes())?;
        o.wrote(dir.join("retention.svg"));
        let rows = self.metric_rows()?;
        let base = m.evaluation.baseline.to_string();
        let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
        metrics.sort_unstable();
        metrics.dedup();
        for metric in metrics.iter().filter(|x| CHARTED.iter().any(|c| x.split(':').next() == Some(c))) {
            for c in m.grid.conditions.iter().filter(|c| **c != m.evaluation.baseline) {
                let name = c.to_string();
                let value = |cond: &str, seed: u64| {
                    rows.iter()
                        .find(|r| r.metric == *metric && r.condition == cond && r.seed == seed)
                        .map(|r| r.value)
                };
                let pairs: Vec<(String, f64, f64)> = m
                    .grid
                    .seeds
                    .iter()
                    .filter_map(|&s| Some((format!("seed {s}"), value(&base, s)?, value(&name, s)?)))
                    .collect();
                if pairs.is_empty() {
                    continue;
                }
                let svg = plot::slope_chart(metric, metric, &base, &name, &pairs);
                let file = dir.join(format!("slope_{}__{}.svg", metric.replace(':', "_"), c.slug()));
                write_atomic(&file, svg.as_bytes())?;
                o.wrote(file);
            }
        }
        for r in &m.evaluation.reading_times {
            let (dmse, under_over) = self.quintile_series(&r.name)?;
            if dmse.is_empty() {
                continue;
            }
            let f1 = dir.join(format!("quintile_dmse_{}.svg", r.name));
            let title = format!("{}: ΔMSE by frequency quintile (vs {base})", r.name);
            write_atomic(&f1, plot::quintile_bars(&title, "ΔMSE (ms²)", &dmse).as_bytes())?;
            let f2 = dir.join(format!("quintile_under_over_{}.svg", r.name));
            let title = format!("{}: normalised SSE, under vs over", r.name);
            write_atomic(&f2, plot::quintile_bars(&title, "normalised SSE", &under_over).as_bytes())?;
            o.wrote(f1);
            o.wrote(f2);
        }
        Ok(o)
    }

    /// Seed-averaged paired ΔMSE per non-baseline condition, and
    /// seed-averaged normalised under/over SSE per condition.
    pub fn quintile_series(&self, rt: &str) -> Result<(Vec<Series>, Vec<Series>)> {
        #[derive(Deserialize)]
        struct Row {
            mse: f64,
            norm_under: f64,
            norm_over: f64,
        }
        let m = &self.manifest;
        let dir = self.out().join("freq").join(rt);
        let cells = self.cells()?;
        let mut per: BTreeMap<(usize, u64), Vec<Row>> = BTreeMap::new();
        for (c, s) in &cells {
            let path = dir.join(format!("{}.csv", cell_dir_name(c, *s)));
            if let Ok(rows) = read_csv::<Row>(&path) {
                let ci = m.grid.conditions.iter().position(|x| x == c).unwrap_or(usize::MAX);
                per.insert((ci, *s), rows);
            }
        }
        let bi = m.grid.conditions.iter().position(|x| *x == m.evaluation.baseline);
        let mut dmse = Vec::new();
        let mut uo = Vec::new();
        for (ci, c) in m.grid.conditions.iter().enumerate() {
            let mut d = [0.0; QUINTILES];
            let (mut under, mut over) = ([0.0; QUINTILES], [0.0; QUINTILES]);
            let (mut nd, mut nu) = (0, 0);
            for &s in &m.grid.seeds {
                let Some(rows) = per.get(&(ci, s)) else { continue };
                nu += 1;
                for q in 0..QUINTILES {
                    under[q] += rows[q].norm_under;
                    over[q] += rows[q].norm_over;
                }
                if Some(ci) != bi {
                    if let Some(b) = bi.and_then(|b| per.get(&(b, s))) {
                        nd += 1;
                        for q in 0..QUINTILES {
                            d[q] += rows[q].mse - b[q].mse;
                        }
                    }
                }
            }
            if nd > 0 {
                dmse.push((c.to_string(), d.iter().map(|x| x / nd as f64).collect()));
            }
            if nu > 0 {
                uo.push((format!("{c} under"), under.iter().map(|x| x / nu as f64).collect()));
                uo.push((format!("{c} over"), over.iter().map(|x| x / nu as f64).collect()));
            }
        }
        Ok((dmse, uo))
    }
}

/// Named bar series for [`plot::quintile_bars`].
pub type Series = (String, Vec<f64>);

pub fn stats_csv(reports: &[StatsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "comparison", "n", "mean", "ci_low", "ci_high", "t", "p", "stars", "n_boot", "seed"])?;
    for r in reports {
        w.write_record([
            r.metric.clone(),
            r.comparison.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.ci[0].to_string(),
            r.ci[1].to_string(),
            r.t.to_string(),
            r.p.to_string(),
            r.stars.clone(),
            r.n_boot.to_string(),
            r.seed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
