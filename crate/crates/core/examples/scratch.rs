// Dev scratchpad for closed-loop tuning. Not part of the toolkit.
use nalgebra::{DMatrix, DVector};
use upright::dynamics::*;
use upright::eic::*;
use upright::experiment::*;
use upright::gp::*;
use upright::peic::*;
use upright::sim::*;

fn spectral_radius_check(plant: &dyn RobotModel, nominal: &dyn RobotModel, states: &[JointState], label: &str) {
    let mut worst: f64 = 0.0;
    for s in states {
        let pe = plant.eval(s).unwrap();
        let ne = nominal.eval(s).unwrap();
        let m = DMatrix::identity(pe.d.nrows(), pe.d.nrows())
            - pe.d.clone().lu().solve(&ne.d).unwrap();
        let rho = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(rho);
    }
    println!("{label}: worst spectral radius of I - D^-1 Dbar = {worst:.3}");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");

    if which == "all" || which == "rho" {
        let mut states = Vec::new();
        for k in 0..50 {
            let a = (k as f64) * 0.137;
            states.push(JointState::new(
                DVector::from_vec(vec![a.sin(), 0.5 * a.cos()]),
                DVector::zeros(2),
            ).unwrap());
        }
        spectral_radius_check(&FurutaPlant::default(), &Sn1Nominal, &states, "furuta/sn1");
        spectral_radius_check(&FurutaPlant::default(), &Sn2Nominal, &states, "furuta/sn2");
        let mut leg_states = Vec::new();
        for k in 0..50 {
            let a = (k as f64) * 0.113;
            leg_states.push(JointState::new(
                DVector::from_vec(vec![0.5 * a.sin(), 0.4 * (3.0 * a).sin(), 0.3 * a.cos()]),
                DVector::zeros(3),
            ).unwrap());
        }
        spectral_radius_check(&Leg3Plant::default(), &LegNominal, &leg_states, "leg/leg-default");
    }

    if which == "all" || which == "furuta-exact" {
        // Exact-model EIC on the Furuta, paper reference.
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.name = "furuta-exact".into();
        cfg.experiment.duration_s = 25.0;
        cfg.controller.model_perturbation = 0.0;
        cfg.reference.joints = vec![vec![
            SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
            SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
        ]];
        let dir = std::env::temp_dir().join("upright-scratch/furuta-exact");
        let out = cmd_simulate(&cfg, None, &dir, false).unwrap();
        println!("  -> diverged={} ticks={}", out.stats.status.diverged, out.stats.ticks);
    }

    if which == "debug-trace" {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.name = "dbg".into();
        cfg.experiment.duration_s = 4.0;
        cfg.reference.joints = vec![vec![
            SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
            SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
        ]];
        let dir = std::env::temp_dir().join("upright-scratch/dbg");
        let out = cmd_simulate(&cfg, None, &dir, true).unwrap();
        println!("t      q1      q2      que     ea      eu      eudot   u");
        for row in out.trace.rows.iter().step_by(80) {
            println!(
                "{:6.3} {:7.3} {:7.3} {:7.3} {:7.3} {:7.3} {:7.3} {:7.3}",
                row.t, row.q[0], row.q[1], row.diag.qu_e[0], row.diag.e_a[0],
                row.diag.e_u[0], row.diag.e_u_dot[0], row.u[0]
            );
        }
    }

    if which == "sweep" {
        // (label, cutoff_hz, kd1, kp2, kd2, amp_scale)
        let cases = [
            ("paper-gains", 10.0, 3.0, 1000.0, 100.0, 1.0),
            ("low-cutoff", 2.0, 3.0, 1000.0, 100.0, 1.0),
            ("more-kd1", 10.0, 8.0, 1000.0, 100.0, 1.0),
            ("soft-inner", 10.0, 3.0, 400.0, 40.0, 1.0),
            ("soft-inner-lc", 2.0, 3.0, 400.0, 40.0, 1.0),
            ("tiny-ref", 10.0, 3.0, 1000.0, 100.0, 0.2),
        ];
        for (label, cutoff, kd1, kp2, kd2, amp) in cases {
            let mut cfg = ExperimentConfig::default();
            cfg.experiment.name = label.into();
            cfg.experiment.duration_s = 10.0;
            cfg.controller.bem_filter_cutoff_hz = cutoff;
            cfg.gains.kd1_base = vec![kd1];
            cfg.gains.kp2_base = vec![kp2];
            cfg.gains.kd2_base = vec![kd2];
            cfg.reference.joints = vec![vec![
                SineTerm { amp: 0.5 * amp, omega: 1.0, phase: 0.0 },
                SineTerm { amp: 0.3 * amp, omega: 1.5, phase: 0.0 },
            ]];
            let dir = std::env::temp_dir().join(format!("upright-scratch/{label}"));
            match cmd_simulate(&cfg, None, &dir, true) {
                Ok(out) => {
                    let es = out.stats.error_stats.as_ref();
                    println!(
                        "{label:14} diverged={} |e_a|={:.4} |e_u|={:.4}",
                        out.stats.status.diverged,
                        es.map_or(f64::NAN, |e| e.actuated[0].mean_abs),
                        es.map_or(f64::NAN, |e| e.unactuated[0].mean_abs),
                    );
                }
                Err(e) => println!("{label:14} error: {e}"),
            }
        }

        // Regulation from a small pendulum offset, zero reference.
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.name = "regulation".into();
        cfg.experiment.duration_s = 5.0;
        cfg.initial.q = Some(vec![0.0, 0.03]);
        let dir = std::env::temp_dir().join("upright-scratch/regulation");
        let out = cmd_simulate(&cfg, None, &dir, true).unwrap();
        for row in out.trace.rows.iter().step_by(200) {
            println!(
                "reg t={:5.2} q1={:7.3} q2={:7.3} que={:7.3} u={:7.3}",
                row.t, row.q[0], row.q[1], row.diag.qu_e[0], row.u[0]
            );
        }
    }

    if which == "gain-sweep" {
        let mut stable = Vec::new();
        for kp1 in [2.0, 4.0, 7.0, 10.0] {
            for kd1 in [1.0, 2.0, 3.0, 5.0] {
                for kp2 in [200.0, 400.0, 1000.0] {
                    for kd2 in [30.0, 60.0, 100.0] {
                        for cutoff in [2.0, 10.0] {
                            let mut cfg = ExperimentConfig::default();
                            cfg.experiment.name = "sweep".into();
                            cfg.experiment.duration_s = 6.0;
                            cfg.experiment.stats_transient_s = 4.0;
                            cfg.controller.bem_filter_cutoff_hz = cutoff;
                            cfg.gains.kp1_base = vec![kp1];
                            cfg.gains.kd1_base = vec![kd1];
                            cfg.gains.kp2_base = vec![kp2];
                            cfg.gains.kd2_base = vec![kd2];
                            cfg.initial.q = Some(vec![0.0, 0.03]);
                            let dir = std::env::temp_dir().join("upright-scratch/gsweep");
                            let Ok(out) = cmd_simulate(&cfg, None, &dir, true) else { continue };
                            if out.stats.status.diverged {
                                continue;
                            }
                            // Regulation quality: worst |q| over the last 2 s.
                            let tail_max = out
                                .trace
                                .rows
                                .iter()
                                .filter(|r| r.t >= 4.0)
                                .map(|r| r.q.abs().max())
                                .fold(0.0, f64::max);
                            if tail_max < 0.01 {
                                stable.push((tail_max, kp1, kd1, kp2, kd2, cutoff));
                            }
                        }
                    }
                }
            }
        }
        stable.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        println!("stable regulation combos: {}", stable.len());
        for (m, kp1, kd1, kp2, kd2, c) in stable.iter().take(25) {
            println!("  tail={m:.2e} kp1={kp1} kd1={kd1} kp2={kp2} kd2={kd2} cutoff={c}");
        }
        // Tracking quality of the best stable combos.
        println!("tracking errors:");
        for (_, kp1, kd1, kp2, kd2, c) in stable.iter().take(12) {
            let mut cfg = ExperimentConfig::default();
            cfg.experiment.name = "track".into();
            cfg.experiment.duration_s = 15.0;
            cfg.controller.bem_filter_cutoff_hz = *c;
            cfg.gains.kp1_base = vec![*kp1];
            cfg.gains.kd1_base = vec![*kd1];
            cfg.gains.kp2_base = vec![*kp2];
            cfg.gains.kd2_base = vec![*kd2];
            cfg.reference.joints = vec![vec![
                SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
                SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
            ]];
            let dir = std::env::temp_dir().join("upright-scratch/tsweep");
            let Ok(out) = cmd_simulate(&cfg, None, &dir, true) else { continue };
            let es = out.stats.error_stats.as_ref();
            println!(
                "  kp1={kp1} kd1={kd1} kp2={kp2} kd2={kd2} c={c}: diverged={} |e_a|={:.4} |e_u|={:.4}",
                out.stats.status.diverged,
                es.map_or(f64::NAN, |e| e.actuated[0].mean_abs),
                es.map_or(f64::NAN, |e| e.unactuated[0].mean_abs),
            );
        }
    }

    if which == "furuta-pipeline" {
        let base = |name: &str| {
            let mut cfg = ExperimentConfig::default();
            cfg.experiment.name = name.into();
            cfg.experiment.seed = 42;
            cfg.experiment.duration_s = 25.0;
            cfg.controller.bem_filter_cutoff_hz = 2.0;
            cfg.gains.kd1_base = vec![2.0];
            cfg.reference.joints = vec![vec![
                SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
                SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
            ]];
            cfg.excitation.joints = vec![vec![
                SineTerm { amp: 0.35, omega: 2.0 * std::f64::consts::PI * 0.5, phase: 0.0 },
                SineTerm { amp: 0.25, omega: 2.0 * std::f64::consts::PI * 1.3, phase: 0.7 },
                SineTerm { amp: 0.15, omega: 2.0 * std::f64::consts::PI * 2.1, phase: 1.9 },
            ]];
            cfg.excitation.duration_s = 20.0;
            cfg
        };

        // Model-based EIC with 20% parameter errors.
        let mut cfg_mb = base("furuta-model-perturbed");
        cfg_mb.controller.model_perturbation = 0.2;
        let dir = std::env::temp_dir().join("upright-scratch/fmb");
        match cmd_simulate(&cfg_mb, None, &dir, true) {
            Ok(out) => {
                let es = out.stats.error_stats.as_ref();
                println!(
                    "model-based(20%): diverged={} |e_a|={:.4} |e_u|={:.4}",
                    out.stats.status.diverged,
                    es.map_or(f64::NAN, |e| e.actuated[0].mean_abs),
                    es.map_or(f64::NAN, |e| e.unactuated[0].mean_abs)
                );
            }
            Err(e) => println!("model-based(20%) error: {e}"),
        }

        // GP pipeline on S^n1.
        let mut cfg_gp = base("furuta-eic-gp-n1");
        cfg_gp.controller.kind = ControllerKind::EicGp;
        cfg_gp.nominal.kind = NominalKind::SN1;
        let dir = std::env::temp_dir().join("upright-scratch/fgp");
        let t0 = std::time::Instant::now();
        let ds = cmd_collect(&cfg_gp, &dir, false).unwrap();
        // Coverage diagnostics.
        let text = std::fs::read_to_string(&ds).unwrap();
        let parsed: DatasetFile = serde_json::from_str(&text).unwrap();
        let dim = parsed.inputs[0].len();
        for d in 0..dim {
            let lo = parsed.inputs.iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
            let hi = parsed.inputs.iter().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
            println!("  x[{d}] in [{lo:.2}, {hi:.2}]");
        }
        let model = cmd_train(&cfg_gp, &ds, &dir, false).unwrap();
        println!("collect+train took {:.1} s", t0.elapsed().as_secs_f64());
        let t1 = std::time::Instant::now();
        match cmd_simulate(&cfg_gp, Some(&model), &dir, true) {
            Ok(out) => {
                let es = out.stats.error_stats.as_ref();
                println!(
                    "eic-gp(sn1): diverged={} |e_a|={:.4} |e_u|={:.4} [sim {:.1} s]",
                    out.stats.status.diverged,
                    es.map_or(f64::NAN, |e| e.actuated[0].mean_abs),
                    es.map_or(f64::NAN, |e| e.unactuated[0].mean_abs),
                    t1.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("eic-gp(sn1) error: {e}"),
        }
    }

    if which == "excitation-sweep" {
        let pi2 = 2.0 * std::f64::consts::PI;
        let variants: Vec<(&str, Vec<SineTerm>)> = vec![
            ("base", vec![
                SineTerm { amp: 0.35, omega: pi2 * 0.5, phase: 0.0 },
                SineTerm { amp: 0.25, omega: pi2 * 1.3, phase: 0.7 },
                SineTerm { amp: 0.15, omega: pi2 * 2.1, phase: 1.9 },
            ]),
            ("fast-reversal", vec![
                SineTerm { amp: 0.3, omega: pi2 * 1.0, phase: 0.0 },
                SineTerm { amp: 0.25, omega: pi2 * 2.6, phase: 3.1 },
                SineTerm { amp: 0.1, omega: pi2 * 0.4, phase: 1.5 },
            ]),
            ("gentle", vec![
                SineTerm { amp: 0.15, omega: pi2 * 0.5, phase: 0.0 },
                SineTerm { amp: 0.1, omega: pi2 * 1.3, phase: 0.7 },
                SineTerm { amp: 0.08, omega: pi2 * 2.1, phase: 1.9 },
            ]),
            ("strong-mix", vec![
                SineTerm { amp: 0.5, omega: pi2 * 0.9, phase: 0.0 },
                SineTerm { amp: 0.35, omega: pi2 * 1.7, phase: 2.0 },
                SineTerm { amp: 0.2, omega: pi2 * 3.1, phase: 4.0 },
            ]),
            ("slow-strong", vec![
                SineTerm { amp: 0.6, omega: pi2 * 0.35, phase: 0.0 },
                SineTerm { amp: 0.3, omega: pi2 * 1.1, phase: 3.5 },
            ]),
        ];
        for (label, terms) in variants {
            let mut cfg = ExperimentConfig::default();
            cfg.experiment.name = label.into();
            cfg.experiment.seed = 42;
            cfg.experiment.duration_s = 25.0;
            cfg.controller.kind = ControllerKind::EicGp;
            cfg.controller.bem_filter_cutoff_hz = 2.0;
            cfg.gains.kd1_base = vec![2.0];
            cfg.nominal.kind = NominalKind::SN1;
            cfg.reference.joints = vec![vec![
                SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
                SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
            ]];
            cfg.excitation.joints = vec![terms];
            cfg.excitation.duration_s = 20.0;
            let dir = std::env::temp_dir().join(format!("upright-scratch/exc-{label}"));
            let ds = cmd_collect(&cfg, &dir, true).unwrap();
            let parsed: DatasetFile =
                serde_json::from_str(&std::fs::read_to_string(&ds).unwrap()).unwrap();
            let range = |d: usize| {
                let lo = parsed.inputs.iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
                let hi = parsed.inputs.iter().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            };
            let model = cmd_train(&cfg, &ds, &dir, true).unwrap();
            match cmd_simulate(&cfg, Some(&model), &dir, true) {
                Ok(out) => {
                    let es = out.stats.error_stats.as_ref();
                    println!(
                        "{label:14} N={:3} q1 in {:?} q2 in {:?} -> diverged={} |e_a|={:.4} |e_u|={:.4}",
                        parsed.inputs.len(),
                        range(0),
                        range(1),
                        out.stats.status.diverged,
                        es.map_or(f64::NAN, |e| e.actuated[0].mean_abs),
                        es.map_or(f64::NAN, |e| e.unactuated[0].mean_abs),
                    );
                }
                Err(e) => println!("{label:14} sim error: {e}"),
            }
        }
    }

    if which == "leg-pipeline" {
        let pi2 = 2.0 * std::f64::consts::PI;
        let cutoff: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
        let kp2: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(25.0);
        let kd2: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5.5);
        let base = |name: &str| {
            let mut cfg = ExperimentConfig::default();
            cfg.experiment.name = name.into();
            cfg.experiment.seed = 7;
            cfg.experiment.duration_s = 30.0;
            cfg.robot.kind = RobotKind::Leg3;
            cfg.nominal.kind = NominalKind::LegDefault;
            cfg.partition.au_indices = vec![1];
            cfg.controller.bem_filter_cutoff_hz = cutoff;
            cfg.controller.torque_limit = Some(8.0);
            cfg.rates.control_hz = 200.0;
            cfg.gains.kp1_base = vec![15.0, 15.0];
            cfg.gains.kp1_slope = vec![20.0, 20.0];
            cfg.gains.kd1_base = vec![3.0, 3.0];
            cfg.gains.kd1_slope = vec![10.0, 10.0];
            cfg.gains.kp2_base = vec![kp2];
            cfg.gains.kp2_slope = vec![20.0];
            cfg.gains.kd2_base = vec![kd2];
            cfg.gains.kd2_slope = vec![10.0];
            cfg.reference.joints = vec![
                vec![SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 }],
                vec![SineTerm { amp: 0.4, omega: 3.0, phase: 0.0 }],
            ];
            cfg.excitation.joints = vec![
                vec![
                    SineTerm { amp: 0.25, omega: pi2 * 0.4, phase: 1.57 },
                    SineTerm { amp: 0.15, omega: pi2 * 1.6, phase: 2.6 },
                ],
                vec![
                    SineTerm { amp: 0.25, omega: pi2 * 0.35, phase: 1.57 },
                    SineTerm { amp: 0.45, omega: pi2 * 1.2, phase: 3.1 },
                    SineTerm { amp: 0.4, omega: pi2 * 2.9, phase: 5.7 },
                    SineTerm { amp: 0.3, omega: pi2 * 4.6, phase: 0.9 },
                ],
            ];
            cfg.excitation.duration_s = 30.0;
            cfg.excitation.q_limit = 2.0;
            cfg.initial.q = Some(vec![0.0, 0.0, 0.03]);
            cfg
        };

        let mut cfg_peic = base("leg-peic");
        cfg_peic.controller.kind = ControllerKind::PeicGp;
        let dir = std::env::temp_dir().join("upright-scratch/leg");
        let t0 = std::time::Instant::now();
        let ds = cmd_collect(&cfg_peic, &dir, false).unwrap();
        let parsed: DatasetFile =
            serde_json::from_str(&std::fs::read_to_string(&ds).unwrap()).unwrap();
        for d in 0..parsed.inputs[0].len() {
            let lo = parsed.inputs.iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
            let hi = parsed.inputs.iter().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
            println!("  x[{d}] in [{lo:.2}, {hi:.2}]");
        }
        // Decorrelation of q3 and qdd3 (columns 2 and 8).
        {
            let col = |d: usize| -> Vec<f64> { parsed.inputs.iter().map(|x| x[d]).collect() };
            let (a, b) = (col(2), col(8));
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
            println!("  corr(q3, qdd3) = {:.3}", cov / (va * vb).sqrt());
        }
        let model = cmd_train(&cfg_peic, &ds, &dir, false).unwrap();
        println!("leg collect+train took {:.1} s", t0.elapsed().as_secs_f64());

        // In-region model quality: compare the learned residual mean with
        // the true residual on a grid of closed-loop-typical states.
        {
            let trained = load_trained_model(&model).unwrap();
            let plant = cfg_peic.build_plant();
            let nominal = cfg_peic.build_nominal().unwrap();
            let mut worst = 0.0f64;
            let mut rms = 0.0;
            let mut count = 0;
            for iq2 in -2..=2 {
                for iq3 in -2..=2 {
                    for iv2 in -2..=2 {
                        let q = DVector::from_vec(vec![0.2, 0.2 * iq2 as f64, 0.06 * iq3 as f64]);
                        let qdot = DVector::from_vec(vec![0.3, 0.6 * iv2 as f64, 0.1]);
                        let qddot = DVector::from_vec(vec![0.5, 1.0, 0.3]);
                        let state = JointState::with_accel(q.clone(), qdot.clone(), qddot.clone()).unwrap();
                        let pe = plant.eval(&state).unwrap();
                        let ne = nominal.eval(&state).unwrap();
                        let truth = (&pe.d - &ne.d) * &qddot + (&pe.h - &ne.h);
                        let x = InputSpec::PosVelAcc.assemble(&q, &qdot, Some(&qddot));
                        let mu = trained.gp_u.predict_mean(&x).unwrap();
                        let err: f64 = (mu[0] - truth[2]).abs();
                        worst = worst.max(err);
                        rms += err * err;
                        count += 1;
                    }
                }
            }
            println!(
                "gp_u in-region: rms {:.4}, worst {:.4} (true residual scale ~{:.2})",
                (rms / count as f64).sqrt(),
                worst,
                0.5
            );
        }

        let t1 = std::time::Instant::now();
        match cmd_simulate(&cfg_peic, Some(&model), &dir, false) {
            Ok(out) => println!(
                "leg-peic: diverged={} end={:.1}s [sim {:.1} s]",
                out.stats.status.diverged, out.stats.status.end_time,
                t1.elapsed().as_secs_f64()
            ),
            Err(e) => println!("leg-peic error: {e}"),
        }

        let mut cfg_eic = base("leg-eic");
        cfg_eic.controller.kind = ControllerKind::EicGp;
        let dir_eic = std::env::temp_dir().join("upright-scratch/leg-eic");
        match cmd_simulate(&cfg_eic, Some(&model), &dir_eic, false) {
            Ok(out) => println!(
                "leg-eic: diverged={} end={:.1}s ctrl_err={:?}",
                out.stats.status.diverged, out.stats.status.end_time,
                out.stats.status.controller_error
            ),
            Err(e) => println!("leg-eic error: {e}"),
        }

        // Tail rows of the peic run for debugging.
        let peic_out = cmd_simulate(
            &{ let mut c = base("leg-peic-dbg"); c.controller.kind = ControllerKind::PeicGp; c },
            Some(&model),
            &std::env::temp_dir().join("upright-scratch/leg-dbg"),
            true,
        );
        if let Ok(out) = peic_out {
            println!("peic dbg: err={:?}", out.stats.status.controller_error);
            for row in out.trace.rows.iter().take(120).step_by(4) {
                println!(
                    "  t={:6.3} q=({:6.2},{:6.2},{:6.2}) qd=({:6.2},{:6.2},{:6.2}) que={:6.3} sig_u={:8.2e} u=({:7.2},{:7.2})",
                    row.t, row.q[0], row.q[1], row.q[2],
                    row.qdot[0], row.qdot[1], row.qdot[2],
                    row.diag.qu_e[0], row.diag.sigma_u[0], row.u[0], row.u[1]
                );
            }
            let n = out.trace.rows.len();
            for row in out.trace.rows.iter().skip(n.saturating_sub(60)).step_by(4) {
                println!(
                    "  t={:6.3} q=({:6.2},{:6.2},{:6.2}) qd=({:6.2},{:6.2},{:6.2}) que={:6.3} sig_u={:8.2e} u=({:7.2},{:7.2})",
                    row.t, row.q[0], row.q[1], row.q[2],
                    row.qdot[0], row.qdot[1], row.qdot[2],
                    row.diag.qu_e[0], row.diag.sigma_u[0], row.u[0], row.u[1]
                );
            }
        }
    }

    if which == "peic-exact" {
        // PEIC sanity check in the exact-model limit: plant IS the nominal
        // (zero residual), GPs are tight priors.
        #[derive(Debug, Clone)]
        struct NominalPlant(LegNominal);
        impl RobotModel for NominalPlant {
            fn dims(&self) -> Dims {
                RobotModel::dims(&self.0)
            }
            fn eval(&self, s: &JointState) -> Result<DynamicsEval, DynamicsError> {
                self.0.eval(s)
            }
        }
        impl PhysicalPlant for NominalPlant {
            fn energy(&self, _s: &JointState) -> f64 {
                0.0
            }
        }
        let dims = Dims { n: 2, m: 1 };
        let spec = InputSpec::PosVelAcc;
        let hyper = Hyperparams::new(vec![1.0; 9], 1e-4, 1e-5).unwrap();
        let gp_a = GpVectorModel::prior(dims.n, hyper.clone(), spec);
        let gp_u = GpVectorModel::prior(dims.m, hyper, spec);
        let gpdyn = GpDynamics::new(LegNominal, gp_a, gp_u, AccelPolicy::PreviousStep).unwrap();
        let cutoff: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
        let kp2: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(25.0);
        let kd2: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5.5);
        let loop_cfg = LoopConfig {
            outer: PdSchedules {
                kp: GainSchedule::constant(vec![15.0, 15.0]),
                kd: GainSchedule::constant(vec![3.0, 3.0]),
            },
            inner: PdSchedules {
                kp: GainSchedule::constant(vec![kp2]),
                kd: GainSchedule::constant(vec![kd2]),
            },
            bem: BemConfig::default(),
            bem_filter_cutoff_hz: cutoff,
            control_dt: 1.0 / 200.0,
            torque_limit: None,
            goal_qu: DVector::zeros(1),
        };
        let mut ctrl =
            PeicController::new(gpdyn, Partition::new(2, 1, vec![1]).unwrap(), loop_cfg).unwrap();
        let reference = Reference {
            joints: vec![
                vec![SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 }],
                vec![SineTerm { amp: 0.4, omega: 3.0, phase: 0.0 }],
            ],
        };
        let at0 = reference.eval(0.0);
        let mut initial = JointState::zero(3);
        initial.qdot.rows_mut(0, 2).copy_from(&at0.qd_d);
        let run_cfg = RunConfig {
            duration: 20.0,
            control_hz: 200.0,
            substeps: 10,
            divergence: DivergenceConfig::default(),
        };
        let plant = NominalPlant(LegNominal);
        let trace = run_closed_loop(&plant, &mut ctrl, &reference, &initial, &run_cfg).unwrap();
        println!(
            "peic-exact: diverged={} err={:?} end={:.2}",
            trace.status.diverged, trace.status.controller_error, trace.status.end_time
        );
        if let Ok(es) = error_stats(&trace, (2.0, 20.0)) {
            println!(
                "  |e_a|=({:.4},{:.4}) |e_u|={:.4}",
                es.actuated[0].mean_abs, es.actuated[1].mean_abs, es.unactuated[0].mean_abs
            );
        }
        let step = if trace.rows.len() > 60 { 400 } else { 1 };
        for row in trace.rows.iter().step_by(step) {
            println!(
                "  t={:5.3} q=({:7.3},{:7.3},{:7.3}) qd=({:7.2},{:7.2},{:7.2}) que={:6.3} u=({:7.2},{:7.2})",
                row.t, row.q[0], row.q[1], row.q[2],
                row.qdot[0], row.qdot[1], row.qdot[2],
                row.diag.qu_e[0], row.u[0], row.u[1]
            );
        }
    }

    if which == "all" || which == "furuta-perturbed" {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.name = "furuta-perturbed".into();
        cfg.experiment.duration_s = 25.0;
        cfg.experiment.seed = 42;
        cfg.controller.model_perturbation = 0.2;
        cfg.reference.joints = vec![vec![
            SineTerm { amp: 0.5, omega: 1.0, phase: 0.0 },
            SineTerm { amp: 0.3, omega: 1.5, phase: 0.0 },
        ]];
        let dir = std::env::temp_dir().join("upright-scratch/furuta-perturbed");
        let _ = cmd_simulate(&cfg, None, &dir, false).unwrap();
    }
}
