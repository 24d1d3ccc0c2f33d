//! Command bodies. Each takes a validated config and an output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use super::config::*;
use super::output::{num, RunOutput};
use crate::analysis::{bellman_jensen_gap, evaluate_bound, horizon_sweep, SweepSettings};
use crate::bola::{compute_budget, evaluate_agent, learn_offline, BolaRunConfig, ModelBundle, SampleBudget};
use crate::envs::timeseries::{generate_synthetic, ingest_timeseries, write_timeseries, IngestFormat};
use crate::envs::wind::{discretize_and_fit, linear_fit, run_wind_experiment};
use crate::envs::build_random_mdp;
use crate::error::{Error, Result};
use crate::mdp::text::{load_mdp, to_text};
use crate::mdp::{classical_value_iteration, greedy_policy, PolicyTable, TabularMdp};
use crate::planner::{BayesOperator, ScenarioSet};
use crate::prediction::{PredictionOracle, PredictionSpec};

fn load_source(source: &MdpSource, out: &mut RunOutput) -> Result<TabularMdp> {
    match source {
        MdpSource::File { path } => load_mdp(path),
        MdpSource::Random(r) => build_random_mdp(r.num_states, r.num_actions, r.discount, r.reward_law, out.seed("mdp")),
    }
}

fn build_spec(prediction: &PredictionConfig, num_actions: usize) -> Result<PredictionSpec> {
    let actions = prediction
        .predictable_actions
        .clone()
        .unwrap_or_else(|| (0..num_actions).collect());
    in_block("prediction", PredictionSpec::new(prediction.horizon, actions, num_actions))
}

fn fixed6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn gen_mdp(config: &GenMdpConfig, out: &mut RunOutput) -> Result<()> {
    let mut rows = Vec::new();
    for i in 0..config.count {
        let seed = out.seed(&format!("mdp-{i}"));
        let m = &config.mdp;
        let mdp = build_random_mdp(m.num_states, m.num_actions, m.discount, m.reward_law, seed)?;
        let name = format!("mdp_{i}.txt");
        out.write_bytes(&name, to_text(&mdp).as_bytes())?;
        rows.push(vec![i.to_string(), name, seed.to_string()]);
    }
    out.write_csv("mdps.csv", &["index", "file", "seed"], &rows)?;
    Ok(())
}

pub fn solve(config: &SolveConfig, out: &mut RunOutput) -> Result<()> {
    let mdp = load_source(&config.mdp, out)?;
    let result = classical_value_iteration(&mdp, config.tol, config.max_iters)?;
    let values = result.values.clone().into_inner();
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(s, v)| vec![s.to_string(), fixed6(*v)])
        .collect();
    out.write_csv("values.csv", &["state", "value"], &rows)?;
    let policy = greedy_policy(&mdp, &values)?;
    let PolicyTable::Deterministic(actions) = &policy else {
        unreachable!("greedy policies are deterministic")
    };
    let rows: Vec<Vec<String>> = actions
        .iter()
        .enumerate()
        .map(|(s, a)| vec![s.to_string(), a.to_string()])
        .collect();
    out.write_csv("policy.csv", &["state", "action"], &rows)?;
    out.write_json("solve.json", &result)?;
    info!("value iteration converged in {} sweeps", result.iterations);
    Ok(())
}

pub fn bayes(config: &BayesConfig, out: &mut RunOutput) -> Result<()> {
    let mdp = load_source(&config.mdp, out)?;
    let spec = build_spec(&config.prediction, mdp.num_actions())?;
    let scenarios = if config.exact_law {
        if !config.prediction.noise.is_identity() {
            return Err(Error::invalid("exact_law", "the exact law covers accurate predictions only"));
        }
        let cap = usize::try_from(config.enumeration_cap).unwrap_or(usize::MAX);
        ScenarioSet::exact_accurate_law(&mdp, &spec, cap)?
    } else {
        let oracle = PredictionOracle::new(
            Arc::new(mdp.clone()),
            spec,
            config.prediction.noise,
            out.seed("scenarios"),
        )?;
        ScenarioSet::uniform(oracle.take(config.scenarios).collect())?
    };
    let bayes = BayesOperator::new(&mdp, &scenarios)?
        .with_enumeration_cap(config.enumeration_cap)
        .solve(config.tol, config.max_iters)?;
    let v_mdp = classical_value_iteration(&mdp, config.tol, config.max_iters)?
        .values
        .into_inner();
    let rows: Vec<Vec<String>> = (0..mdp.num_states())
        .map(|s| {
            vec![
                s.to_string(),
                num(v_mdp[s]),
                num(bayes.values[s]),
                num(bayes.values[s] - v_mdp[s]),
            ]
        })
        .collect();
    out.write_csv("values.csv", &["state", "v_mdp", "v_bayes", "improvement"], &rows)?;
    out.write_json("bayes_value.json", &bayes)?;
    Ok(())
}

#[derive(Serialize)]
struct BolaSummary<'a> {
    n1: usize,
    n2: usize,
    budget: Option<&'a SampleBudget>,
    mean_return: Option<f64>,
    std_error: Option<f64>,
    episodes: Option<usize>,
}

fn resolve_budget(config: &BolaConfig, mdp: &TabularMdp, spec: &PredictionSpec) -> Result<(usize, usize, Option<SampleBudget>)> {
    let inputs = in_block(
        "budget",
        config.budget.formula_inputs(
            mdp.discount(),
            spec.horizon(),
            mdp.num_states(),
            mdp.num_actions(),
            spec.predictable_actions().len(),
        ),
    )?;
    let budget = inputs
        .map(|inputs| in_block("budget", compute_budget(&inputs)))
        .transpose()?;
    let to_count = |field: &str, explicit: Option<usize>, formula: Option<u64>| -> Result<usize> {
        let n = match (explicit, formula) {
            (Some(n), _) => n,
            (None, Some(n)) => usize::try_from(n).unwrap_or(usize::MAX),
            (None, None) => return Err(Error::invalid(format!("budget.{field}"), "missing")),
        };
        if n > config.max_samples {
            return Err(Error::invalid(
                format!("budget.{field}"),
                format!("{n} samples exceed max_samples = {}; set it explicitly", config.max_samples),
            ));
        }
        Ok(n)
    };
    let n1 = to_count("n1", config.budget.n1, budget.map(|b| b.n1))?;
    let n2 = to_count("n2", config.budget.n2, budget.map(|b| b.n2))?;
    Ok((n1, n2, budget))
}

pub fn bola(config: &BolaConfig, out: &mut RunOutput) -> Result<()> {
    let mdp = load_source(&config.mdp, out)?;
    let spec = build_spec(&config.prediction, mdp.num_actions())?;
    let mut budget = None;
    let bundle = match config.stage {
        BolaStage::Offline | BolaStage::Both => {
            let (n1, n2, computed) = resolve_budget(config, &mdp, &spec)?;
            budget = computed;
            let seed = out.seed("offline");
            let agent = learn_offline(
                &mdp,
                &spec,
                &config.prediction.noise,
                n1,
                n2,
                config.tol,
                config.max_iters,
                seed,
            )?;
            let bundle = ModelBundle {
                agent,
                channel: config.prediction.noise,
                n1,
                n2,
                seed,
            };
            out.write_json("bundle.json", &bundle)?;
            bundle
        }
        BolaStage::Online => {
            let path = config.bundle.as_ref().expect("validated");
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let bundle: ModelBundle = serde_json::from_str(&text)?;
            if bundle.agent.model.planning_mdp.num_states() != mdp.num_states()
                || bundle.agent.model.planning_mdp.num_actions() != mdp.num_actions()
            {
                return Err(Error::ShapeMismatch("bundle was learned on an MDP of another size".into()));
            }
            if bundle.agent.model.spec != spec || bundle.channel != config.prediction.noise {
                warn!("prediction block differs from the bundle; evaluating with the bundle's spec and channel");
            }
            bundle
        }
    };

    let values: Vec<Vec<String>> = bundle
        .agent
        .learned_value
        .values
        .iter()
        .enumerate()
        .map(|(s, v)| vec![s.to_string(), num(*v)])
        .collect();
    out.write_csv("learned_value.csv", &["state", "value"], &values)?;

    let mut summary = BolaSummary {
        n1: bundle.n1,
        n2: bundle.n2,
        budget: budget.as_ref(),
        mean_return: None,
        std_error: None,
        episodes: None,
    };
    if config.stage != BolaStage::Offline {
        let run = BolaRunConfig {
            n1: bundle.n1,
            n2: bundle.n2,
            episodes: config.episodes,
            horizon: config.episode_length,
            start_state: config.start_state,
            tol: config.tol,
            max_iters: config.max_iters,
            record_trajectories: config.record_trajectories,
            seed: out.seed("online"),
        };
        let report = evaluate_agent(&mdp, &bundle.agent, &bundle.channel, &run)?;
        let rows: Vec<Vec<String>> = report
            .episodes
            .iter()
            .enumerate()
            .map(|(e, t)| vec![e.to_string(), num(t.discounted_return)])
            .collect();
        out.write_csv("returns.csv", &["episode", "discounted_return"], &rows)?;
        if config.record_trajectories {
            let mut rows = Vec::new();
            for (e, t) in report.episodes.iter().enumerate() {
                for (step, (s, a)) in t.states.iter().zip(&t.actions).enumerate() {
                    rows.push(vec![e.to_string(), step.to_string(), s.to_string(), a.to_string()]);
                }
            }
            out.write_csv("trajectories.csv", &["episode", "step", "state", "action"], &rows)?;
        }
        summary.mean_return = Some(report.returns.mean);
        summary.std_error = Some(report.returns.std_error);
        summary.episodes = Some(report.returns.episodes);
    }
    out.write_json("summary.json", &summary)?;
    Ok(())
}

pub fn gap(config: &GapConfig, out: &mut RunOutput) -> Result<()> {
    let mdp = load_source(&config.mdp, out)?;
    let report = bellman_jensen_gap(&mdp, config.k, config.realizations, config.tol, out.seed("gap"))?;
    let rows: Vec<Vec<String>> = (0..mdp.num_states())
        .map(|s| {
            vec![
                s.to_string(),
                num(report.v_off[s]),
                num(report.v_mdp[s]),
                num(report.delta[s]),
                num(report.mc_stderr[s]),
            ]
        })
        .collect();
    out.write_csv("gap.csv", &["state", "v_off", "v_mdp", "delta", "stderr"], &rows)?;
    out.write_json("gap.json", &report)?;
    Ok(())
}

pub fn bound(config: &BoundConfig, out: &mut RunOutput) -> Result<()> {
    let report = evaluate_bound(
        &config.params(),
        config.gamma,
        config.horizon,
        config.num_actions,
        config.num_predictable,
    )?;
    let mut rows = vec![
        vec!["a1".to_string(), num(report.a1)],
        vec!["a2".into(), num(report.a2)],
        vec!["a3".into(), num(report.a3)],
        vec!["total".into(), num(report.total)],
        vec!["a3_tail_remainder".into(), num(report.a3_tail_remainder)],
    ];
    if let Some(inputs) = config.budget_inputs() {
        let budget = in_block("budget", compute_budget(&inputs))?;
        rows.extend([
            vec!["n1_raw".into(), num(budget.n1_raw)],
            vec!["n2_raw".into(), num(budget.n2_raw)],
            vec!["n1".into(), budget.n1.to_string()],
            vec!["n2".into(), budget.n2.to_string()],
            vec!["d1".into(), budget.d1.to_string()],
            vec!["d2".into(), budget.d2.to_string()],
        ]);
        out.write_json("budget.json", &budget)?;
    }
    out.write_csv("bound.csv", &["term", "value"], &rows)?;
    out.write_json("bound.json", &report)?;
    Ok(())
}

pub fn wind(config: &WindConfig, out: &mut RunOutput) -> Result<()> {
    let dataset = match &config.data {
        Some(path) => {
            let format = match &config.format {
                Some(sidecar) => IngestFormat::from_toml_file(sidecar)?,
                None => IngestFormat::default(),
            };
            ingest_timeseries(path, &format)?
        }
        None => generate_synthetic(&config.synthetic, out.seed("synthetic"))?,
    };
    let model = discretize_and_fit(&dataset, &config.storage)?;
    for w in &model.warnings {
        warn!("{w}");
    }
    let report = run_wind_experiment(&model, &config.experiment, out.seed("experiment"))?;
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.horizon.to_string(),
                num(p.eta),
                num(p.mean_cost),
                num(p.saving_pct),
                num(p.saving_stderr_pct),
            ]
        })
        .collect();
    out.write_csv(
        "wind.csv",
        &["horizon", "eta", "mean_cost", "saving_pct", "saving_stderr_pct"],
        &rows,
    )?;
    let mut fits = Vec::new();
    for &k in &config.experiment.horizons {
        let (x, y): (Vec<f64>, Vec<f64>) = report
            .points
            .iter()
            .filter(|p| p.horizon == k)
            .map(|p| (p.eta, p.saving_pct))
            .unzip();
        if x.len() >= 2 {
            let (slope, intercept, r2) = linear_fit(&x, &y);
            fits.push(vec![k.to_string(), num(slope), num(intercept), num(r2)]);
        }
    }
    out.write_csv("fits.csv", &["horizon", "slope", "intercept", "r2"], &fits)?;
    out.write_json("wind.json", &report)?;
    out.write_json(
        "model.json",
        &serde_json::json!({
            "price_values": model.price_values,
            "mismatch_values": model.mismatch_values,
            "soc_grid": model.soc_grid,
            "reward_map": model.reward_map,
            "warnings": model.warnings,
        }),
    )?;
    Ok(())
}

pub fn gen_wind(config: &GenWindConfig, out: &mut RunOutput) -> Result<()> {
    let dataset = generate_synthetic(&config.synthetic, out.seed("synthetic"))?;
    let path = out.root().join("wind.csv");
    write_timeseries(&dataset, &path, &IngestFormat::default())?;
    out.track("wind.csv");
    Ok(())
}

pub fn sweep(config: &SweepConfig, out: &mut RunOutput) -> Result<()> {
    let mut rows = Vec::new();
    let mut states = Vec::new();
    let mut curve = vec![0.0; config.horizons.len()];
    for i in 0..config.count {
        let m = &config.mdp;
        let mdp = build_random_mdp(m.num_states, m.num_actions, m.discount, m.reward_law, out.seed(&format!("mdp-{i}")))?;
        let settings = SweepSettings {
            horizons: config.horizons.clone(),
            scenarios: config.scenarios,
            tol: config.tol,
            max_iters: config.max_iters,
            offline_reference: config.offline_reference,
            seed: out.seed(&format!("sweep-{i}")),
        };
        let report = horizon_sweep(&mdp, &settings)?;
        let low = report.state_trace(report.lowest_state);
        let high = report.state_trace(report.highest_state);
        for (j, p) in report.points.iter().enumerate() {
            curve[j] += p.mean_improvement / config.count as f64;
            rows.push(vec![
                i.to_string(),
                p.k.to_string(),
                num(p.mean_value),
                num(p.mean_improvement),
                num(low[j]),
                num(high[j]),
                p.iterations.to_string(),
            ]);
        }
        let v_off = report.v_off.as_ref();
        for s in 0..mdp.num_states() {
            let mut row = vec![i.to_string(), s.to_string(), num(report.v_mdp[s])];
            row.extend(report.points.iter().map(|p| num(p.values[s])));
            row.push(v_off.map_or_else(String::new, |o| num(o.values[s])));
            states.push(row);
        }
    }
    out.write_csv(
        "sweep.csv",
        &[
            "mdp",
            "k",
            "mean_value",
            "mean_improvement",
            "lowest_state_improvement",
            "highest_state_improvement",
            "iterations",
        ],
        &rows,
    )?;
    let mut header: Vec<String> = vec!["mdp".into(), "state".into(), "v_mdp".into()];
    header.extend(config.horizons.iter().map(|k| format!("v_k{k}")));
    header.push("v_off".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv("states.csv", &header, &states)?;
    let curve: Vec<Vec<String>> = config
        .horizons
        .iter()
        .zip(&curve)
        .map(|(k, c)| vec![k.to_string(), num(*c)])
        .collect();
    out.write_csv("curve.csv", &["k", "mean_improvement"], &curve)?;
    Ok(())
}

/// Resolves a path relative to the config file's directory.
pub(crate) fn relative_to(base: &Path, path: &Path) -> PathBuf {
    if path.is_relative() {
        base.join(path)
    } else {
        path.to_path_buf()
    }
}
