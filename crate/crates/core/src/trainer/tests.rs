use super::*;
use crate::graphstore::{generate_sbm, SbmParams};
use crate::pareto::frank_wolfe_min_norm;

fn sbm(n: usize, seed: u64) -> Graph {
    generate_sbm(
        &SbmParams {
            blocks: 3,
            nodes: n,
            p_intra: 0.2,
            p_inter: 0.02,
            feat_dim: 8,
            feat_noise: 0.5,
        },
        seed,
    )
    .unwrap()
}

fn small_cfg(mode: TrainMode, steps: usize) -> TrainConfig {
    TrainConfig {
        mode,
        steps,
        hidden: vec![16, 8],
        seed: 3,
        ..TrainConfig::default()
    }
}

fn strip_time(mut r: Vec<StepRecord>) -> Vec<StepRecord> {
    r.iter_mut().for_each(|x| x.millis = 0.0);
    r
}

#[test]
fn uniform_weights_are_constant() {
    let g = sbm(60, 1);
    let out = train_run(&g, &small_cfg(TrainMode::Uniform, 5)).unwrap();
    for r in &out.records {
        assert_eq!(r.alpha, [0.2; 5]);
        assert!(r.losses.iter().all(Option::is_some));
    }
}

#[test]
fn single_mode_touches_only_its_head() {
    let g = sbm(60, 2);
    let cfg = small_cfg(TrainMode::Single(TaskId::FeatRec), 4);
    let init = TrainState::init(&g, &cfg).unwrap();
    let out = train_run(&g, &cfg).unwrap();
    for r in &out.records {
        assert_eq!(r.alpha, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(r.losses[0].is_some() && r.losses[1..].iter().all(Option::is_none));
    }
    assert_eq!(out.state.heads.topo_scorer, init.heads.topo_scorer);
    assert_eq!(out.state.heads.ming_scorer, init.heads.ming_scorer);
    assert_ne!(out.state.heads.feat_decoder, init.heads.feat_decoder);
    assert_eq!(out.state.head_updates(HeadKind::Decoder), 4);
    assert_eq!(out.state.head_updates(HeadKind::Topo), 0);
    assert_eq!(out.state.head_updates(HeadKind::MiNg), 0);
}

#[test]
fn pareto_direction_never_longer_than_any_task_gradient() {
    let g = sbm(60, 3);
    let out = train_run(&g, &small_cfg(TrainMode::Pareto, 15)).unwrap();
    for r in &out.records {
        let s: f64 = r.alpha.iter().sum();
        assert!((s - 1.0).abs() <= 1e-10 && r.alpha.iter().all(|&a| a >= 0.0));
        assert!(r.grad_norm <= r.min_task_grad_norm * (1.0 + 1e-12), "{r:?}");
    }
}

#[test]
fn runs_are_deterministic() {
    let g = sbm(60, 4);
    let cfg = small_cfg(TrainMode::Pareto, 6);
    let a = train_run(&g, &cfg).unwrap();
    let b = train_run(&g, &cfg).unwrap();
    assert_eq!(strip_time(a.records.clone()), strip_time(b.records));
    assert_eq!(a.state.encoder, b.state.encoder);
    let mut x = Vec::new();
    let mut y = Vec::new();
    write_records_csv(&mut x, &a.records, false).unwrap();
    write_records_csv(&mut y, &strip_time(a.records), false).unwrap();
    assert_eq!(x, y);
}

#[test]
fn config_validation() {
    let g = sbm(30, 5);
    assert!(train_run(&g, &small_cfg(TrainMode::Pareto, 0)).is_err());
    let mut c = small_cfg(TrainMode::Pareto, 1);
    c.optimizer.lr = 0.0;
    assert!(c.validate().is_err());
    let mut c = small_cfg(TrainMode::Pareto, 1);
    c.tasks = vec![TaskId::MiNg, TaskId::MiNg];
    assert!(c.validate().is_err());
    assert_eq!(TrainMode::parse("single(topo_rec)"), Some(TrainMode::Single(TaskId::TopoRec)));
    assert_eq!(TrainMode::parse("single(x)"), None);
    assert_eq!(TrainMode::Single(TaskId::MiNg).to_string(), "single(mi_ng)");
}

#[test]
fn log_cadence_keeps_last_step() {
    let g = sbm(30, 6);
    let mut cfg = small_cfg(TrainMode::Uniform, 7);
    cfg.log_every = 3;
    let out = train_run(&g, &cfg).unwrap();
    let steps: Vec<usize> = out.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 3, 6]);
}

#[test]
fn csv_layout() {
    let g = sbm(30, 7);
    let out = train_run(&g, &small_cfg(TrainMode::Single(TaskId::MiNg), 2)).unwrap();
    let mut buf = Vec::new();
    write_records_csv(&mut buf, &out.records, false).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "step,loss_feat_rec,loss_topo_rec,loss_rep_decor,loss_mi_ng,loss_mi_nsg,\
         alpha_feat_rec,alpha_topo_rec,alpha_rep_decor,alpha_mi_ng,alpha_mi_nsg,grad_norm,solver_iters,ms"
    );
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), 14);
    assert_eq!(cells[1], "");
    assert!(cells[4].parse::<f64>().is_ok());
    assert_eq!(cells[9], "1.0000000000000000e0");
    assert_eq!(cells[13], "0");
}

#[test]
fn descent_check_single_task() {
    let g = sbm(60, 8);
    let cfg = small_cfg(TrainMode::Single(TaskId::TopoRec), 1);
    let state = TrainState::init(&g, &cfg).unwrap();
    let rep = first_order_descent_check(&state, &g, &cfg, 1e-4).unwrap();
    assert_eq!(rep.deltas.len(), 1);
    assert!(rep.deltas[0].1 < 0.0);
}

#[test]
fn descent_check_five_tasks() {
    let g = sbm(60, 9);
    let cfg = small_cfg(TrainMode::Pareto, 3);
    let mut state = TrainState::init(&g, &cfg).unwrap();
    for _ in 0..3 {
        let rep = first_order_descent_check(&state, &g, &cfg, 1e-4).unwrap();
        assert!(rep.residual <= 1e-6 * rep.direction_norm.powi(2).max(1.0));
        for (t, d) in &rep.deltas {
            assert!(*d <= 1e-7, "{t}: {d}");
        }
        train_step(&mut state, &g, &cfg).unwrap();
    }
}

#[test]
fn orthogonal_quadratics_both_decrease() {
    // L1 = ½‖θ − a‖², L2 = ½‖θ − b‖² at θ = 0: gradients −a, −b
    let a = [1.0, 0.0, 0.0];
    let b = [0.0, 2.0, 0.0];
    let loss = |t: &[f64], c: &[f64; 3]| 0.5 * t.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let g = TaskGradientMatrix::from_rows(vec![a.iter().map(|v| -v).collect(), b.iter().map(|v| -v).collect()])
        .unwrap();
    let (w, _) = frank_wolfe_min_norm(&g, 100, 1e-5).unwrap();
    let d = combined_direction(&g, &w).unwrap();
    let eps = 1e-4;
    let theta: Vec<f64> = d.as_slice().iter().map(|v| -eps * v / d.norm()).collect();
    for (k, c) in [a, b].iter().enumerate() {
        let delta = loss(&theta, c) - loss(&[0.0; 3], c);
        let gk = g.row(k);
        let first_order = -eps * gk.dot(&d) / d.norm();
        assert!(delta < 0.0);
        assert!((delta - first_order).abs() <= eps * eps);
    }
}

#[test]
fn unscaled_head_updates_flag() {
    let g = sbm(40, 10);
    let mut cfg = small_cfg(TrainMode::Pareto, 2);
    let scaled = train_run(&g, &cfg).unwrap();
    cfg.scale_head_grads = false;
    let unscaled = train_run(&g, &cfg).unwrap();
    assert_eq!(
        strip_time(scaled.records)[0].losses,
        strip_time(unscaled.records)[0].losses
    );
    assert_ne!(scaled.state.heads, unscaled.state.heads);
}
