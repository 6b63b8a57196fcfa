use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use serde::Serialize;

use crate::apps::qkd::qkd_run;
use crate::apps::sensing::sensing_run;
use crate::apps::ubqc::ubqc_run;
use crate::apps::{service_complete, AppError};
use crate::engine::exec::Runtime;
use crate::engine::{EventKind, Metrics, Trace};
use crate::netmodel::NodeId;
use crate::protocol::{
    acquire_pairs, handover, provision, register, teleport, EntanglementRequest, HandoverMode, Payload, Pctx, QueState,
    SliceType, World,
};

use super::config::{AppConfig, AppType, ScenarioConfig};
use super::ScenarioError;

/// Result of one application instance invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppOutcome {
    pub app: String,
    pub kind: String,
    pub iteration: u32,
    pub t_start: f64,
    pub t_end: f64,
    /// False on a hard failure: the app could not run to completion.
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct RunOutput {
    pub run_id: String,
    pub seed: u64,
    pub until: f64,
    pub trace: Trace,
    pub metrics: Metrics,
    pub apps: Vec<AppOutcome>,
    pub world: World,
}

impl RunOutput {
    pub fn hard_failures(&self) -> usize {
        self.apps.iter().filter(|a| !a.ok).count()
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run_id", "seed", "metric", "value", "unit"])?;
        let seed = self.seed.to_string();
        for (metric, value, unit) in self.metrics.rows() {
            w.write_record([self.run_id.as_str(), seed.as_str(), &metric, &value, &unit])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> Summary<'_> {
        Summary {
            run_id: &self.run_id,
            seed: self.seed,
            until: self.until,
            trace_records: self.trace.len(),
            hard_failures: self.hard_failures(),
            apps: &self.apps,
        }
    }

    /// Write `metrics.csv`, `trace.jsonl` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(dir)?;
        self.write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
        let mut trace = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
        self.trace.write_jsonl(&mut trace)?;
        trace.flush()?;
        let mut summary = serde_json::to_string_pretty(&self.summary())?;
        summary.push('\n');
        fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub run_id: &'a str,
    pub seed: u64,
    pub until: f64,
    pub trace_records: usize,
    pub hard_failures: usize,
    pub apps: &'a [AppOutcome],
}

async fn attach(ctx: &Pctx, node: &NodeId) -> Result<(), AppError> {
    if ctx.world(|w| w.state(node)) == Some(QueState::Idle) {
        let bs = ctx.world(|w| w.access_bs(node, ctx.now()))?;
        register(ctx, node, &bs).await?;
    }
    Ok(())
}

fn ids(app: &AppConfig) -> Vec<NodeId> {
    app.parties.iter().map(|p| NodeId::from(p.as_str())).collect()
}

async fn invoke(ctx: &Pctx, app: &AppConfig, f_min: f64) -> Result<String, AppError> {
    let p = ids(app);
    match app.kind {
        AppType::Qkd => {
            attach(ctx, &p[0]).await?;
            attach(ctx, &p[1]).await?;
            let report = qkd_run(ctx, &app.qkd.unwrap_or_default(), &p[0], &p[1]).await?;
            Ok(match report.key() {
                Some(k) => format!("key of {} bits", k.key_a.len()),
                None => {
                    let last = report.rounds.last().and_then(|r| r.abort.as_ref());
                    format!("no key: {}", last.map_or("abort", |a| a.label()))
                }
            })
        }
        AppType::Ubqc => {
            attach(ctx, &p[0]).await?;
            attach(ctx, &p[1]).await?;
            let report = ubqc_run(ctx, &app.ubqc.clone().unwrap_or_default(), &p[0], &p[1]).await?;
            Ok(format!("output {}", report.output as u8))
        }
        AppType::Sensing => {
            let cfg = app.sensing.expect("validated sensing app");
            let report = sensing_run(ctx, &cfg, &p[1..], &p[0]).await?;
            Ok(format!("phase {:.6} ± {:.6}", report.estimate.phase, report.estimate.std))
        }
        AppType::Teleport => {
            attach(ctx, &p[0]).await?;
            attach(ctx, &p[1]).await?;
            let mut req = EntanglementRequest::new(&p[0], &p[1], SliceType::GenerateAndStore, 1, 10.0);
            req.app_type = "teleport".into();
            req.min_fidelity = f_min;
            let got = acquire_pairs(ctx, &req).await;
            let Some(&pair) = got.delivered.first() else {
                return Err(AppError::Session(got.reason.unwrap_or_else(|| got.outcome.to_string())));
            };
            let payload = ctx.world_mut(|w| w.payloads.fresh());
            let record = teleport(ctx, &p[0], &p[1], Payload::Token(payload), pair).await?;
            service_complete(ctx, "teleport", &[&p[0], &p[1]], "delivered");
            Ok(format!("quality {:.6}", record.quality))
        }
        AppType::Handover => {
            let old = ctx
                .world(|w| w.serving(&p[0]).cloned())
                .ok_or_else(|| AppError::Session(format!("{} is not attached", p[0])))?;
            let mode = app.handover_mode.unwrap_or(HandoverMode::Soft);
            let r = handover(ctx, &p[0], &old, &p[1], mode).await?;
            Ok(format!("{:?} handover, downtime {:.6}", r.mode_used, r.downtime))
        }
    }
}

async fn app_process(ctx: Pctx, app: AppConfig, f_min: f64, outcomes: Rc<RefCell<Vec<AppOutcome>>>) {
    ctx.sleep_until(app.start_s, EventKind::AppStep).await;
    for i in 0..app.repeat {
        if i > 0 {
            ctx.sleep(app.interval_s).await;
        }
        let t_start = ctx.now();
        let result = invoke(&ctx, &app, f_min).await;
        let (ok, detail) = match result {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        log::debug!("app {} #{i} at t={:.6}: ok={ok} {detail}", app.name, ctx.now());
        let label = if ok { "ok" } else { "failed" };
        ctx.metrics(|m| m.incr(&format!("app.{}.{label}", app.name), 1.0, "count"));
        ctx.trace(
            &app.parties[0],
            "app_result",
            [("app", app.name.clone()), ("ok", ok.to_string()), ("detail", detail.clone())],
        );
        outcomes.borrow_mut().push(AppOutcome {
            app: app.name.clone(),
            kind: app.kind.to_string(),
            iteration: i,
            t_start,
            t_end: ctx.now(),
            ok,
            detail,
        });
    }
}

/// Run `cfg` with optional seed and horizon overrides. The configuration
/// must have validated.
pub fn run(cfg: &ScenarioConfig, seed: Option<u64>, until: Option<f64>, run_id: &str) -> RunOutput {
    let seed = seed.unwrap_or(cfg.seed);
    let until = until.unwrap_or(cfg.duration_s).max(0.0);
    log::info!("run {run_id}: seed {seed}, horizon {until} s");
    let mut rt = Runtime::new(World::new(cfg.topology(), cfg.protocol_config()), seed);
    let outcomes = Rc::new(RefCell::new(Vec::new()));
    let f_min = cfg.defaults.f_min;

    // A zero horizon simulates nothing at all.
    if until > 0.0 {
        let policy = cfg.policy.policy();
        for [que, peer] in &cfg.policy.provision {
            let (que, peer) = (NodeId::from(que.as_str()), NodeId::from(peer.as_str()));
            rt.spawn(move |ctx| async move {
                for n in [&que, &peer] {
                    if let Err(e) = attach(&ctx, n).await {
                        ctx.trace(n.as_str(), "provision_failed", [("error", e.to_string())]);
                        return;
                    }
                }
                provision(ctx, policy, que, peer, f_min, until).await;
            });
        }
        for app in &cfg.apps {
            let (app, outcomes) = (app.clone(), outcomes.clone());
            rt.spawn(move |ctx| app_process(ctx, app, f_min, outcomes));
        }
        rt.run_until(until).expect("horizon is not in the past");
    }

    let (mut world, mut trace, mut metrics) = rt.finish();
    let mut expired = 0;
    for p in world.store.live() {
        if world.cfg.trace_resources {
            trace.record(until, p.pair.holders[0].as_str(), "expire", [("id", p.pair.id.to_string())]);
        }
        expired += 1;
    }
    world.store.expire_all(until);
    if expired > 0 {
        metrics.incr("pairs_expired", expired as f64, "count");
    }
    log::info!("run {run_id}: {} trace records, {expired} pairs expired at the horizon", trace.len());
    let apps = Rc::try_unwrap(outcomes).map(RefCell::into_inner).unwrap_or_default();
    RunOutput { run_id: run_id.to_owned(), seed, until, trace, metrics, apps, world }
}
