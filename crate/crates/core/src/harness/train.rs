use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::config::RunConfig;
use super::metrics::{metrics_to_csv, MetricsRow};
use super::EVAL_FRACTION;
use crate::error::{Error, Result};
use crate::grouping::{GroupingScheme, ModuleTag};
use crate::model::{clip_global_norm, synth_corpus, Corpus, ParamSet, Transformer};
use crate::numerics::Rng;
use crate::optim::{OptimizerState, StepConfig};
use crate::scaling::{build_plan, module_lr, ScalingPlan};
use crate::snr::{module_snr, GradStats, SnrReport};

/// Parameters whose effective learning rate fills the `lr_*` metric columns.
pub fn lr_column_params(tied: bool) -> [&'static str; 5] {
    [
        "token_embedding",
        if tied { "token_embedding" } else { "head" },
        "layers.0.attn.w_q",
        "layers.0.attn.w_v",
        "layers.0.mlp.w_ff1",
    ]
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub report: Option<SnrReport>,
    pub plan: Option<ScalingPlan>,
    pub params: ParamSet,
    pub calibration_ms: f64,
    pub train_ms: f64,
}

impl RunOutcome {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("a run logs at least one row")
    }

    pub fn final_eval_loss(&self) -> f64 {
        self.final_row().eval_loss.unwrap_or(f64::NAN)
    }
}

/// Model, data and initial weights for a config, all derived from its seed.
pub struct Setup {
    pub model: Transformer,
    pub corpus: Corpus,
    pub params: ParamSet,
    pub scheme: GroupingScheme,
    root: Rng,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mc = config.model_config();
        let root = Rng::new(config.seed);
        let tokens = synth_corpus(&mut root.derive("corpus"), config.corpus_tokens, mc.vocab_size)?;
        let corpus = Corpus::new(tokens, mc.vocab_size, EVAL_FRACTION)?;
        let params = mc.init_params(&mut root.derive("init"))?;
        Ok(Setup {
            model: Transformer::new(mc)?,
            corpus,
            params,
            scheme: GroupingScheme::new(config.grouping),
            root,
        })
    }

    pub fn rng(&self, label: &str) -> Rng {
        self.root.derive(label)
    }
}

/// Accumulates `k` gradient draws at the given (frozen) weights.
pub fn collect_grad_stats(
    model: &Transformer,
    params: &ParamSet,
    corpus: &Corpus,
    rng: &mut Rng,
    k: usize,
    batch_size: usize,
) -> Result<GradStats> {
    let seq = model.config().seq_len;
    let mut stats = GradStats::new(params);
    for _ in 0..k {
        let batch = corpus.train_batch(rng, batch_size, seq)?;
        let (_, grads) = model.loss_and_grad(params, &batch)?;
        stats.accumulate(&grads)?;
    }
    Ok(stats)
}

/// Frozen-weight calibration at the initial parameters.
pub fn calibrate_setup(config: &RunConfig, setup: &Setup) -> Result<SnrReport> {
    let stats = collect_grad_stats(
        &setup.model,
        &setup.params,
        &setup.corpus,
        &mut setup.rng("calibration"),
        config.calib_batches,
        config.batch_size,
    )?;
    module_snr(&stats, &setup.scheme, config.snr_mode, config.eps_var)
}

fn plan_for(config: &RunConfig, report: &SnrReport) -> Result<ScalingPlan> {
    let tw = config.schedule()?.warmup_steps();
    build_plan(report, config.clamp_max)?.with_ramp(config.calibration_end_step(), tw)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn append_trace(dir: &Path, event: serde_json::Value) -> Result<()> {
    let path = dir.join("trace.jsonl");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{event}").map_err(|e| Error::io(&path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for stale in ["metrics.csv", "snr_report.json", "scaling_plan.json", "trace.jsonl"] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(p, e))?;
        }
    }
    Ok(())
}

fn evaluate(setup: &Setup, params: &ParamSet, config: &RunConfig) -> Result<f64> {
    let seq = config.seq_len;
    let mut total = 0.0;
    for i in 0..config.eval_batches {
        let batch = setup.corpus.eval_batch(i, config.batch_size, seq)?;
        total += setup.model.forward(params, &batch)?.0;
    }
    Ok(total / config.eval_batches as f64)
}

/// Full pipeline: optional calibration and plan, then training with the
/// scheduled per-module learning rates.
pub fn run_train(config: &RunConfig) -> Result<RunOutcome> {
    run_train_with_report(config, None)
}

/// As [`run_train`], but when MoLS is enabled and `report` is given it is used
/// instead of measuring one.
pub fn run_train_with_report(config: &RunConfig, report: Option<SnrReport>) -> Result<RunOutcome> {
    let setup = Setup::new(config)?;
    let out = config.out_dir.as_deref();
    if let Some(dir) = out {
        prepare_dir(dir)?;
        write_file(dir, "config.json", &config.to_json()?)?;
        append_trace(dir, json!({"event": "config", "config": config}))?;
    }

    let schedule = config.schedule()?;
    let mut calibration_ms = 0.0;
    let (report, plan) = if config.mols_enabled {
        let started = Instant::now();
        let report = match report {
            Some(r) => r,
            None => calibrate_setup(config, &setup)?,
        };
        calibration_ms = started.elapsed().as_secs_f64() * 1e3;
        let plan = plan_for(config, &report)?;
        if let Some(dir) = out {
            write_file(dir, "snr_report.json", &report.to_json()?)?;
            write_file(dir, "scaling_plan.json", &plan.to_json()?)?;
            append_trace(dir, json!({"event": "snr_report", "report": report}))?;
            append_trace(dir, json!({"event": "scaling_plan", "plan": plan}))?;
        }
        (Some(report), Some(plan))
    } else {
        (None, None)
    };
    let active_plan = plan.clone().unwrap_or_else(ScalingPlan::identity);

    let tags: Vec<ModuleTag> = {
        let mut t: Vec<ModuleTag> = setup.params.names().map(|n| setup.scheme.classify(n)).collect();
        t.sort();
        t.dedup();
        t
    };
    let column_tags: Vec<ModuleTag> = lr_column_params(config.tie_embeddings)
        .iter()
        .map(|n| setup.scheme.classify(n))
        .collect();

    let mut params = setup.params.clone();
    let mut state = OptimizerState::new(config.optimizer, config.hyper(), &setup.scheme, &params);
    let mut data_rng = setup.rng("data");
    let mut rows = Vec::with_capacity(config.total_steps);
    let started = Instant::now();

    let mut step_once = |t: usize, params: &mut ParamSet| -> Result<MetricsRow> {
        let batch = setup.corpus.train_batch(&mut data_rng, config.batch_size, config.seq_len)?;
        let (loss, grads) = setup.model.loss_and_grad(params, &batch)?;
        let grads = if config.grad_clip > 0.0 {
            clip_global_norm(&grads, config.grad_clip)?
        } else {
            grads
        };
        let multipliers: BTreeMap<ModuleTag, f64> =
            tags.iter().map(|&tag| (tag, active_plan.ramp(t, tag))).collect();
        let cfg = StepConfig {
            lr: schedule.base_lr(t)?,
            multipliers,
            bias_correction: config.bias_correction,
        };
        state.step(params, &grads, &cfg)?;
        let mut lr = [0.0; 5];
        for (slot, &tag) in lr.iter_mut().zip(&column_tags) {
            *slot = module_lr(&active_plan, &schedule, t, tag)?;
        }
        let is_eval = (t + 1).is_multiple_of(config.eval_every) || t + 1 == config.total_steps;
        let eval_loss = if is_eval {
            Some(evaluate(&setup, params, config)?)
        } else {
            None
        };
        Ok(MetricsRow {
            step: t,
            train_loss: loss,
            eval_loss,
            ppl: eval_loss.map(f64::exp),
            lr,
            wallclock_ms: if config.record_wallclock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    };

    for t in 0..config.total_steps {
        match step_once(t, &mut params) {
            Ok(row) => rows.push(row),
            Err(e) => {
                if let Some(dir) = out {
                    let mut diag = rows.clone();
                    diag.push(MetricsRow {
                        step: t,
                        train_loss: f64::NAN,
                        eval_loss: None,
                        ppl: None,
                        lr: [f64::NAN; 5],
                        wallclock_ms: 0,
                    });
                    write_file(dir, "metrics.csv", &metrics_to_csv(&diag))?;
                    append_trace(dir, json!({"event": "abort", "step": t, "error": e.to_string()}))?;
                }
                return Err(e);
            }
        }
    }
    let train_ms = started.elapsed().as_secs_f64() * 1e3;

    if let Some(dir) = out {
        write_file(dir, "metrics.csv", &metrics_to_csv(&rows))?;
        append_trace(
            dir,
            json!({"event": "final", "row": rows.last(), "calibration_ms": calibration_ms, "train_ms": train_ms}),
        )?;
    }
    Ok(RunOutcome {
        rows,
        report,
        plan,
        params,
        calibration_ms,
        train_ms,
    })
}

/// Outputs of a stand-alone calibration.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub report: SnrReport,
    pub plan: ScalingPlan,
    pub elapsed_ms: f64,
    pub out_dir: Option<PathBuf>,
}

/// Measures the SNR report at the initial weights and derives the plan without training.
pub fn run_calibrate(config: &RunConfig) -> Result<CalibrationOutcome> {
    let setup = Setup::new(config)?;
    let started = Instant::now();
    let report = calibrate_setup(config, &setup)?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let plan = plan_for(config, &report)?;
    if let Some(dir) = config.out_dir.as_deref() {
        prepare_dir(dir)?;
        write_file(dir, "config.json", &config.to_json()?)?;
        write_file(dir, "snr_report.json", &report.to_json()?)?;
        write_file(dir, "scaling_plan.json", &plan.to_json()?)?;
        append_trace(dir, json!({"event": "snr_report", "report": report}))?;
        append_trace(dir, json!({"event": "scaling_plan", "plan": plan}))?;
    }
    Ok(CalibrationOutcome {
        report,
        plan,
        elapsed_ms,
        out_dir: config.out_dir.clone(),
    })
}
