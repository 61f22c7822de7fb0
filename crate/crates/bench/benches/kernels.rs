use std::rc::Rc;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use hetcomm::autodiff::{ParameterStore, Tape};
use hetcomm::comm::RgcnLayer;
use hetcomm::policy::{stack_rows, RecurrentState, RecurrentVars};
use hetcomm::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rgcn_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 8;
    let classes = (0..n).map(|i| AgentClassId(usize::from(i >= 3))).collect();
    let arcs = (0..n).flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t))).collect();
    let graph = HeterogeneousAgentGraph::build(2, classes, arcs).unwrap();
    let incidence = Rc::new(graph.incidence());
    let mut store = ParameterStore::new();
    let layer = RgcnLayer::init(&mut store, "l", 96, 96, 4, 2, &mut rng).unwrap();
    let x = Tensor::uniform(&[n, 96], 1.0, &mut rng);
    c.bench_function("rgcn_layer_forward_8x96", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let params = tape.bind(&store, false);
            let xv = tape.constant(x.clone());
            let out = layer.forward(&mut tape, &params, xv, &incidence, 0.01).unwrap();
            black_box(tape.value(out).len())
        })
    });
}

fn network(kind: CommKind) -> (Box<dyn Environment>, QNetwork, ParameterStore, TrainConfig) {
    let config = TrainConfig {
        scenario: "s3z5".into(),
        comm: kind,
        ..TrainConfig::default()
    };
    let env = config.build_env().unwrap();
    let (net, store) = QNetwork::init(config.network_config(env.spec()), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (env, net, store, config)
}

fn network_step(c: &mut Criterion) {
    for kind in [CommKind::Rgcn, CommKind::Gat, CommKind::None] {
        let (mut env, net, store, config) = network(kind);
        let spec = env.spec().clone();
        let result = env.reset(0).unwrap();
        let obs = stack_rows(&result.padded(&spec, true).unwrap()).unwrap();
        let state = RecurrentState::zeros(spec.num_agents, config.hidden);
        c.bench_function(&format!("act_s3z5_{kind}"), |b| {
            b.iter(|| black_box(net.evaluate(&store, &obs, &result.graph, &state).unwrap()))
        });
        let incidence = Rc::new(result.graph.incidence());
        c.bench_function(&format!("forward_backward_s3z5_{kind}"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let params = tape.bind(&store, true);
                let ov = tape.constant(obs.clone());
                let s = RecurrentVars::from_state(&mut tape, &state);
                let (q, _) = net.step(&mut tape, &params, ov, &incidence, s).unwrap();
                let sq = tape.square(q);
                let loss = tape.sum(sq);
                tape.backward(loss).unwrap();
                black_box(tape.parameter_gradients().unwrap().global_norm())
            })
        });
    }
}

fn env_step(c: &mut Criterion) {
    for name in ["s3z5", "mmm2"] {
        let mut env = make_env(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        c.bench_function(&format!("env_episode_{name}_random"), |b| {
            b.iter_batched(
                || rng.gen::<u64>(),
                |seed| {
                    let mut r = env.reset(seed).unwrap();
                    let mut pick = ChaCha8Rng::seed_from_u64(seed);
                    while !r.done {
                        let actions: Vec<usize> = r
                            .masks
                            .iter()
                            .map(|m| {
                                let legal: Vec<usize> = m.legal_actions().collect();
                                legal[pick.gen_range(0..legal.len())]
                            })
                            .collect();
                        r = env.step(&actions).unwrap();
                    }
                    black_box(r.info.defeated_enemies)
                },
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, rgcn_forward, network_step, env_step);
criterion_main!(benches);
