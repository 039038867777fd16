use dropgraph::backbones::{read_checkpoint, write_checkpoint, Pass, TinyResNet, TinyResNetConfig};
use dropgraph::experiments::{
    gen_sbm, run_one, prepare, sgd_step, train_graph, ExperimentConfig, SbmGraphSpec, Task,
};
use dropgraph::nn::{cross_entropy, Bound};
use dropgraph::regularizers::{Progress, RegularizerConfig, RegularizerSpec};
use dropgraph::tensor::grad_check_many;
use dropgraph::{Parallelism, RngStream, Tape, Tensor};
use std::cell::RefCell;

fn small_cnn() -> TinyResNetConfig {
    TinyResNetConfig {
        in_channels: 3,
        image_size: 8,
        stem_channels: 4,
        groups: vec![(1, 4), (1, 8)],
        classes: 3,
        regularize_groups: vec![0, 1],
        regularize_skip: true,
    }
}

fn dropgraph_spec() -> RegularizerSpec {
    RegularizerSpec::DropGraph(RegularizerConfig {
        alpha: 0.5,
        rho_target: 0.3,
        block_size: 3,
        ..Default::default()
    })
}

fn tiny_image_config(spec: RegularizerSpec) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Task::Image);
    c.image.image_size = 8;
    c.image.train_count = 16;
    c.image.val_count = 16;
    c.image.classes = 3;
    c.cnn = small_cnn();
    c.regularizer = spec;
    c.train.batch_size = 16;
    c.train.epochs = 50;
    c.train.eval_every = 50;
    c.train.flip = false;
    c
}

// Whole-network gradient through a regularized training pass: the mask,
// vertex draws and multipliers depend only on the stream, so the loss is a
// fixed function of the parameters.
#[test]
fn resnet_parameter_gradients_match_differences() {
    let net = RefCell::new(TinyResNet::new(small_cnn(), dropgraph_spec(), &RngStream::new(1)).unwrap());
    let params: Vec<Tensor> = net.borrow().store.iter().map(|p| p.value.clone()).collect();
    let x = Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * 1.5);
    let progress = Progress { step: 5, total_steps: 10 };
    let err = grad_check_many(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let pass = Pass::train(progress, RngStream::new(7));
            let logits = net.borrow_mut().forward(&tape.constant(x.clone()), &p, &pass)?;
            cross_entropy(&logits, &[0, 2])
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn resnet_memorizes_a_small_batch() {
    let cfg = tiny_image_config(RegularizerSpec::None);
    let data = prepare(&cfg).unwrap();
    let r = run_one(&cfg, &data, 0, Parallelism::Sequential).unwrap();
    assert!(!r.diverged());
    assert!(r.epochs.last().unwrap().train_loss < 0.1, "{:?}", r.epochs.last());
    assert_eq!(r.final_train_acc, 100.0);
}

#[test]
fn gcn_memorizes_its_labeled_nodes() {
    let mut cfg = ExperimentConfig::new(Task::NodeGraph);
    cfg.graph.feature_noise = 1.0;
    let g = gen_sbm(&cfg.graph).unwrap();
    let r = train_graph(&cfg, &g, 0).unwrap();
    assert_eq!(r.final_train_acc, 100.0);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let mut net = TinyResNet::new(small_cnn(), RegularizerSpec::None, &RngStream::new(2)).unwrap();
    let before: Vec<Tensor> = net.store.iter().map(|p| p.value.clone()).collect();
    let tape = Tape::new();
    let p = net.store.bind(&tape, true);
    let x = tape.constant(Tensor::from_fn(&[2, 3, 8, 8], |i| (i as f64).sin()));
    let logits = net.forward(&x, &p, &Pass::train(Progress::start(), RngStream::new(0))).unwrap();
    tape.backward(cross_entropy(&logits, &[1, 0]).unwrap()).unwrap();
    net.store.accumulate_grads(&p);
    assert!(net.store.iter().any(|p| p.grad.data().iter().any(|&g| g != 0.0)));
    sgd_step(&mut net.store, 0.0, 0.9, 5e-4);
    for (b, p) in before.iter().zip(net.store.iter()) {
        assert!(b.bit_eq(&p.value), "{} moved", p.name);
    }
}

#[test]
fn checkpoint_file_restores_predictions() {
    let cfg = tiny_image_config(dropgraph_spec());
    let mut cfg = cfg;
    cfg.train.epochs = 3;
    let mut net = TinyResNet::new(cfg.cnn.clone(), cfg.regularizer, &RngStream::new(4)).unwrap();
    // one training step so running statistics move off their defaults
    {
        let tape = Tape::new();
        let p = net.store.bind(&tape, true);
        let x = tape.constant(Tensor::from_fn(&[4, 3, 8, 8], |i| (i as f64 * 0.3).cos()));
        let logits = net.forward(&x, &p, &Pass::train(Progress::start(), RngStream::new(0))).unwrap();
        tape.backward(cross_entropy(&logits, &[0, 1, 2, 0]).unwrap()).unwrap();
        net.store.accumulate_grads(&p);
        sgd_step(&mut net.store, 0.1, 0.9, 0.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    write_checkpoint(std::fs::File::create(&path).unwrap(), &net.state_entries()).unwrap();
    let entries = read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();

    let mut fresh = TinyResNet::new(cfg.cnn.clone(), cfg.regularizer, &RngStream::new(99)).unwrap();
    fresh.load_state(&entries).unwrap();
    let x = Tensor::from_fn(&[3, 3, 8, 8], |i| (i as f64 * 0.7).sin());
    let predict = |n: &mut TinyResNet| {
        let tape = Tape::new();
        let p = n.store.bind(&tape, false);
        n.forward(&tape.constant(x.clone()), &p, &Pass::eval()).unwrap().value().as_ref().clone()
    };
    assert!(predict(&mut net).bit_eq(&predict(&mut fresh)));
}

#[test]
fn same_seed_same_run_other_seed_other_run() {
    let mut cfg = tiny_image_config(dropgraph_spec());
    cfg.train.epochs = 4;
    cfg.train.eval_every = 2;
    let data = prepare(&cfg).unwrap();
    let a = run_one(&cfg, &data, 3, Parallelism::Sequential).unwrap();
    let b = run_one(&cfg, &data, 3, Parallelism::Parallel).unwrap();
    let c = run_one(&cfg, &data, 4, Parallelism::Sequential).unwrap();
    assert!(a.same_results(&b));
    assert!(!a.same_results(&c));
}

#[test]
fn recorded_rho_ramps_from_zero_to_target() {
    let mut cfg = tiny_image_config(dropgraph_spec());
    cfg.train.epochs = 5;
    let data = prepare(&cfg).unwrap();
    let r = run_one(&cfg, &data, 0, Parallelism::Sequential).unwrap();
    assert_eq!(r.epochs[0].rho_start, 0.0);
    assert!((r.epochs[4].rho_end - 0.3).abs() < 1e-15);
    assert!(r.epochs.windows(2).all(|w| w[0].rho_end == w[1].rho_start && w[0].rho_start < w[0].rho_end));
}

#[test]
fn sbm_generator_respects_the_split_sizes() {
    let spec = SbmGraphSpec::default();
    let g = gen_sbm(&spec).unwrap();
    assert_eq!(g.nodes(), spec.nodes);
    assert_eq!(g.train.len(), spec.labeled_per_class * spec.communities);
    assert_eq!(g.val.len(), spec.val_per_class * spec.communities);
    let mut all: Vec<usize> = g.train.iter().chain(&g.val).chain(&g.test).copied().collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), spec.nodes);
}
