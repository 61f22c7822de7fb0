//! Quick self-checks on tiny instances, run by the `smoke` command.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Checkpoint, GradCheck, ParameterStore, Tape, Tensor};
use crate::comm::RgcnLayer;
use crate::env::{make_env, BUILTIN_SCENARIOS};
use crate::error::Result;
use crate::graph::{AgentClassId, HeterogeneousAgentGraph};
use crate::learner::vdn_mix;
use crate::policy::{EpsilonSchedule, RecurrentState};
use crate::{CommKind, CommModuleConfig, NetworkConfig, QNetwork};

#[derive(Clone, Debug, PartialEq)]
pub struct SmokeCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> SmokeCheck {
    match outcome {
        Ok(detail) => SmokeCheck {
            name,
            passed: true,
            detail,
        },
        Err(detail) => SmokeCheck {
            name,
            passed: false,
            detail,
        },
    }
}

fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, classes: usize) -> HeterogeneousAgentGraph {
    let node_classes = (0..nodes).map(|_| AgentClassId(rng.gen_range(0..classes))).collect();
    let mut arcs = Vec::new();
    for s in 0..nodes {
        for t in 0..nodes {
            if s != t && rng.gen_bool(0.4) {
                arcs.push((s, t));
            }
        }
    }
    HeterogeneousAgentGraph::build(classes, node_classes, arcs).expect("valid random graph")
}

fn rgcn_against_loops() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let classes = rng.gen_range(1..=3);
        let nodes = rng.gen_range(1..=6);
        let graph = random_graph(&mut rng, nodes, classes);
        let mut store = ParameterStore::new();
        let layer = RgcnLayer::init(&mut store, "l", 3, 4, classes * classes, 2, &mut rng).map_err(|e| e.to_string())?;
        let x = Tensor::uniform(&[nodes, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let params = tape.bind(&store, false);
        let xv = tape.constant(x.clone());
        let out = layer
            .preactivation(&mut tape, &params, xv, &Rc::new(graph.incidence()))
            .map_err(|e| e.to_string())?;
        let got = tape.value(out);
        let w0 = store.tensor(layer.self_matrix);
        for i in 0..nodes {
            for o in 0..4 {
                let mut expect: f64 = (0..3).map(|k| x.at(i, k) * w0.at(k, o)).sum();
                for r in 0..classes * classes {
                    let nbrs = graph.neighbors_by_relation(i, r).map_err(|e| e.to_string())?;
                    let wr = layer.relation_matrix(&store, r);
                    for &j in &nbrs {
                        expect += (0..3).map(|k| x.at(j, k) * wr.at(k, o)).sum::<f64>() / nbrs.len() as f64;
                    }
                }
                worst = worst.max((got.at(i, o) - expect).abs());
            }
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max abs diff {worst:.2e}"))
    } else {
        Err(format!("max abs diff {worst:.2e}"))
    }
}

fn network_gradients() -> Result<String, String> {
    let config = NetworkConfig {
        input_width: 3,
        hidden: 4,
        num_actions: 3,
        num_classes: 2,
        comm: CommModuleConfig {
            kind: CommKind::Gat,
            width: 4,
            num_heads: 2,
            ..CommModuleConfig::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (net, store) = QNetwork::init(config, &mut rng).map_err(|e| e.to_string())?;
    let graph = HeterogeneousAgentGraph::build(2, vec![AgentClassId(0), AgentClassId(1), AgentClassId(1)], vec![(0, 1), (2, 1), (1, 0)])
        .map_err(|e| e.to_string())?;
    let obs: Vec<Tensor> = (0..2).map(|_| Tensor::uniform(&[3, 3], 1.0, &mut rng)).collect();
    let incidence = Rc::new(graph.incidence());
    let loss_of = |store: &ParameterStore, track: bool| -> Result<(f64, Option<Vec<Vec<f64>>>), String> {
        let mut tape = Tape::new();
        let params = tape.bind(store, track);
        let mut state = crate::policy::RecurrentVars::from_state(&mut tape, &RecurrentState::zeros(3, 4));
        let mut total = None;
        for o in &obs {
            let ov = tape.constant(o.clone());
            let (q, next) = net.step(&mut tape, &params, ov, &incidence, state).map_err(|e| e.to_string())?;
            state = next;
            let sq = tape.square(q);
            let s = tape.sum(sq);
            total = Some(match total {
                Some(t) => tape.add(t, s).map_err(|e| e.to_string())?,
                None => s,
            });
        }
        let loss = total.unwrap();
        let value = tape.value(loss).item();
        if !track {
            return Ok((value, None));
        }
        tape.backward(loss).map_err(|e| e.to_string())?;
        let grads = tape.parameter_gradients().map_err(|e| e.to_string())?;
        Ok((value, Some(grads.iter().map(<[f64]>::to_vec).collect())))
    };
    let (_, analytic) = loss_of(&store, true)?;
    let report = GradCheck::default().compare_store(&store, &analytic.unwrap(), |s| loss_of(s, false).unwrap().0);
    let detail = format!("{} entries, max rel err {:.2e} at {}", report.checked, report.max_rel_error, report.worst_param);
    if report.passed(1e-4) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn env_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut steps = 0;
    for name in BUILTIN_SCENARIOS.iter().copied().chain(["signal", "twostate"]) {
        let mut env = make_env(name).map_err(|e| e.to_string())?;
        for episode in 0..3 {
            let mut r = env.reset(episode).map_err(|e| e.to_string())?;
            let mut defeated = 0;
            while !r.done {
                let actions: Vec<usize> = r
                    .masks
                    .iter()
                    .map(|m| {
                        let legal: Vec<usize> = m.legal_actions().collect();
                        legal[rng.gen_range(0..legal.len())]
                    })
                    .collect();
                r = env.step(&actions).map_err(|e| format!("{name}: {e}"))?;
                if r.info.defeated_enemies < defeated || r.reward < 0.0 {
                    return Err(format!("{name}: defeated count fell or reward negative"));
                }
                defeated = r.info.defeated_enemies;
                steps += 1;
            }
        }
    }
    Ok(format!("{steps} mask-legal steps across all environments"))
}

fn contracts() -> Result<String, String> {
    let eps = EpsilonSchedule::default();
    let ok = vdn_mix(&[1.0, 2.0, -0.5]) == 2.5
        && eps.value(0) == 0.95
        && eps.value(25_000) == 0.525
        && eps.value(50_000) == 0.1
        && eps.value(1 << 40) == 0.1;
    if ok {
        Ok("mixer sum and exploration schedule exact".into())
    } else {
        Err("contract values differ".into())
    }
}

fn checkpoint_round_trip() -> Result<String, String> {
    let config = NetworkConfig {
        input_width: 1 + 2,
        hidden: 6,
        num_actions: 2,
        num_classes: 2,
        comm: CommModuleConfig {
            width: 6,
            ..CommModuleConfig::default()
        },
    };
    let (net, store) = QNetwork::init(config, &mut ChaCha8Rng::seed_from_u64(5)).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    Checkpoint::new(store.clone()).write_to(&mut bytes).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::read_from(&mut bytes.as_slice()).map_err(|e| e.to_string())?.store;
    let mut env = make_env("signal").map_err(|e| e.to_string())?;
    let a = crate::harness::evaluate_policy(&net, &store, env.as_mut(), 8, true, None).map_err(|e| e.to_string())?;
    let b = crate::harness::evaluate_policy(&net, &loaded, env.as_mut(), 8, true, None).map_err(|e| e.to_string())?;
    if loaded.values_bit_equal(&store) && a == b {
        Ok(format!("{} bytes, evaluation identical", bytes.len()))
    } else {
        Err("reloaded parameters or evaluation differ".into())
    }
}

pub fn run_smoke() -> Vec<SmokeCheck> {
    vec![
        check("rgcn-loop-oracle", rgcn_against_loops()),
        check("network-gradients", network_gradients()),
        check("env-invariants", env_invariants()),
        check("schedule-and-mixer", contracts()),
        check("checkpoint-round-trip", checkpoint_round_trip()),
    ]
}
