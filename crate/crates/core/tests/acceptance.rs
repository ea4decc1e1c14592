//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when
//! earlier criteria fail. Exits non-zero if any criterion fails. Lines
//! marked DIAG are informational and never counted.

mod common;

use std::io::BufReader;
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use common::{brute_force_dimension, fixture, uniform_line, uniform_square, SyntheticMdp};
use lshctl::config::ExperimentConfig;
use lshctl::embedding::{correlation_dimension, log_spaced_radii, Observable, ScalingWindow};
use lshctl::hashing::{collision_probability, lsh_key, LshBank, LshFunction};
use lshctl::mdp::{
    q_learning_rate, value_iteration, ActionIndex, MdpModel, Probabilities, QTarget, RewardTensor, StateId,
};
use lshctl::persist::{ModelDocument, Provenance, Stage};
use lshctl::plants::{
    lorenz_integrate, serve, ExternalPlant, LorenzParams, LorenzState, PlantTrace, RecordingPlant,
};
use lshctl::runner::{self, Artifacts, CostOptions, EpisodeLog, PlantSource, PolicyKind, RolloutOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn diag(&self, id: &str, detail: String) {
        println!("[DIAG] criterion {id}: {detail}");
    }
}

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

fn cost_options(cfg: &ExperimentConfig) -> CostOptions {
    CostOptions {
        rollout: RolloutOptions { ticks: cfg.evaluation.ticks, engage_time: cfg.evaluation.engage_time },
        gamma: cfg.learning.gamma,
        cost_start_time: cfg.evaluation.cost_start_time,
    }
}

fn wing_fraction(log: &EpisodeLog, from: f64, to: f64) -> f64 {
    let rows: Vec<_> = log.rows.iter().filter(|r| r.t >= from && r.t <= to).collect();
    let right = rows.iter().filter(|r| r.x.expect("lorenz state")[0] > 0.0).count();
    right as f64 / rows.len() as f64
}

struct SeedOutcome {
    seed: u64,
    calibration_nkey: usize,
    controlled: f64,
    uncontrolled: f64,
    eta_null: Option<f64>,
    eta_oracle: Option<f64>,
    eta_learned: Option<f64>,
    v_learned: Option<f64>,
    v_null: Option<f64>,
    oracle_action: f64,
}

fn run_lorenz_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    let source = PlantSource::from_config(&cfg.plant).unwrap();
    let mut plant = source.open(seed).unwrap();
    let (artifacts, cal, _) = runner::run_pipeline(&mut plant, cfg, seed).expect("pipeline");
    let opts = cost_options(cfg);
    let learned = runner::rollout(&mut source.open(seed).unwrap(), &artifacts, PolicyKind::Learned, opts.rollout).unwrap();
    let null = runner::rollout(&mut source.open(seed).unwrap(), &artifacts, PolicyKind::Null, opts.rollout).unwrap();
    let eval = runner::evaluate(&source, &artifacts, &[seed], opts).expect("evaluation");
    let row = |p: &str| eval.rows_for(p).next().cloned().unwrap();
    SeedOutcome {
        seed,
        calibration_nkey: cal.registry.len(),
        controlled: wing_fraction(&learned, 20.0, 100.0),
        uncontrolled: wing_fraction(&null, 20.0, 100.0),
        eta_null: row("null").eta,
        eta_oracle: row("oracle").eta,
        eta_learned: row("learned").eta,
        v_learned: row("learned").mean_v,
        v_null: row("null").mean_v,
        oracle_action: eval.oracle.action,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".to_string(), |x| format!("{x:.4}"))
}

fn lorenz_criteria(report: &mut Report, cfg: &ExperimentConfig, label: &str, counted: bool) {
    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> = SEEDS.iter().map(|&s| run_lorenz_seed(cfg, s)).collect();
    let elapsed = start.elapsed();
    for o in &outcomes {
        println!(
            "  {label} seed {:>2}: Nkey(cal)={:>2} X1>0 controlled={:.3} uncontrolled={:.3} \
             eta(null)={} eta(oracle)={} eta(learned)={} <V_learned>={} <V_null>={} oracle a={}",
            o.seed,
            o.calibration_nkey,
            o.controlled,
            o.uncontrolled,
            fmt_opt(o.eta_null),
            fmt_opt(o.eta_oracle),
            fmt_opt(o.eta_learned),
            fmt_opt(o.v_learned),
            fmt_opt(o.v_null),
            o.oracle_action,
        );
    }
    let emit = |report: &mut Report, id: &str, pass: bool, detail: String| {
        if counted {
            report.line(id, pass, detail);
        } else {
            report.diag(id, format!("{label}: {} {detail}", if pass { "would pass" } else { "would fail" }));
        }
    };

    let confined: Vec<&SeedOutcome> = outcomes.iter().filter(|o| o.controlled <= 0.05).collect();
    let baseline = outcomes.iter().map(|o| o.uncontrolled).sum::<f64>() / outcomes.len() as f64;
    let c1 = confined.len() >= 8 && (0.3..=0.7).contains(&baseline) && elapsed < Duration::from_secs(300);
    emit(
        report,
        "1 (wing confinement)",
        c1,
        format!(
            "{}/10 seeds with X1>0 fraction <= 5% (need 8); mean uncontrolled fraction {:.3} (need [0.30, 0.70]); runtime {:.1}s (need < 300s)",
            confined.len(),
            baseline,
            elapsed.as_secs_f64()
        ),
    );

    let nkeys: Vec<usize> = outcomes.iter().map(|o| o.calibration_nkey).collect();
    let c2 = nkeys.iter().all(|n| (8..=25).contains(n));
    emit(report, "2 (state count)", c2, format!("calibration Nkey per seed {nkeys:?} (need all in [8, 25])"));

    let exact = outcomes.iter().all(|o| o.eta_null == Some(0.0) && o.eta_oracle == Some(1.0));
    let good = outcomes.iter().filter(|o| o.eta_learned.is_some_and(|e| e > 0.5)).count();
    let undefined = outcomes.iter().filter(|o| o.eta_learned.is_none()).count();
    emit(
        report,
        "3 (performance indicator)",
        exact && good >= 8,
        format!(
            "eta(NULL)=0 and eta(ORACLE)=1 exactly on all seeds: {exact}; learned eta > 0.5 on {good}/10 (need 8); undefined on {undefined}"
        ),
    );

    let ordered = confined
        .iter()
        .filter(|o| matches!((o.v_learned, o.v_null), (Some(l), Some(n)) if l > n))
        .count();
    let c4 = !confined.is_empty() && ordered == confined.len();
    emit(
        report,
        "4 (value ordering)",
        c4,
        if confined.is_empty() {
            "no seed passed criterion 1, so the ordering cannot be assessed".to_string()
        } else {
            format!("<V_learned> > <V_NULL> on {ordered}/{} confined seeds", confined.len())
        },
    );
}

fn criterion_5(report: &mut Report) {
    let gamma = 0.95;
    let mut policy_ok = 0;
    let mut worst_err = 0.0f64;
    for k in 0..20u64 {
        let mdp = SyntheticMdp::random(1000 + k, 6, 4);
        let (s, a) = (mdp.n_states, mdp.n_actions);
        let p = Probabilities::from_dense(s, a, mdp.flat_p()).unwrap();
        let r = RewardTensor::from_dense(s, a, mdp.flat_r()).unwrap();
        let (v_star, pi_star) = value_iteration(&p, &r, gamma, 1e-12).unwrap();
        let q_star = lshctl::mdp::q_from_values(&p, &r, gamma, &v_star);

        let mut model = MdpModel::new(s, a, gamma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77 + k);
        let mut i = 0usize;
        for _ in 0..1_000_000 {
            let l = rng.random_range(0..a);
            let j = mdp.sample_next(i, l, &mut rng);
            let (si, al, sj) = (StateId::from_index(i), ActionIndex::from_index(l), StateId::from_index(j));
            model.update_reward(si, al, sj, mdp.r[i][l][j]).unwrap();
            let alpha = q_learning_rate(model.q_visits(si, al) + 1, 0.85).unwrap();
            model.update_q(si, al, sj, alpha, QTarget::SuccessorMax).unwrap();
            i = j;
        }
        let greedy = lshctl::mdp::greedy_policy(&model);
        if greedy.actions() == pi_star.actions() {
            policy_ok += 1;
        }
        let scale = q_star.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        let err = model
            .q_matrix()
            .iter()
            .zip(&q_star)
            .fold(0.0f64, |m, (q, qs)| m.max((q - qs).abs()))
            / scale;
        worst_err = worst_err.max(err);
    }
    report.line(
        "5 (Q-learning vs value iteration)",
        policy_ok >= 19 && worst_err < 0.05,
        format!("optimal policy recovered on {policy_ok}/20 MDPs (need 19); worst relative max-norm Q error {:.4} (need < 0.05)", worst_err),
    );
}

fn criterion_6(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (s, a) = (rng.random_range(1..5), rng.random_range(1..4));
        let mut model = MdpModel::new(s, a, 0.9).unwrap();
        let mut seen: std::collections::BTreeMap<(usize, usize, usize), Vec<f64>> = Default::default();
        for _ in 0..rng.random_range(1..200) {
            let (i, l, j) = (rng.random_range(0..s), rng.random_range(0..a), rng.random_range(0..s));
            let c: f64 = rng.random_range(-1e3..1e3);
            model
                .update_reward(StateId::from_index(i), ActionIndex::from_index(l), StateId::from_index(j), c)
                .unwrap();
            seen.entry((i, l, j)).or_default().push(c);
        }
        for ((i, l, j), cs) in &seen {
            let mean = cs.iter().sum::<f64>() / cs.len() as f64;
            let got = model
                .transition(StateId::from_index(*i), ActionIndex::from_index(*l), StateId::from_index(*j))
                .unwrap()
                .reward;
            worst = worst.max((got - mean).abs() / mean.abs().max(1e-300));
        }
    }
    report.line(
        "6 (reward mean identity)",
        worst <= 1e-10,
        format!("1000 random update sequences; worst relative deviation from the arithmetic mean {worst:.2e} (need <= 1e-10)"),
    );
}

fn criterion_7(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ne = 8;
    let q = 45.0;
    let dir: Vec<f64> = (0..ne).map(|_| rng.sample(StandardNormal)).collect();
    let f = LshFunction::from_direction(dir, q, 0).unwrap();
    let radius = q / 2.0;
    let n = 10_000;
    let mut hits = 0;
    for _ in 0..n {
        let y1: Vec<f64> = (0..ne).map(|_| rng.random_range(-100.0..100.0)).collect();
        let d: Vec<f64> = (0..ne).map(|_| rng.sample(StandardNormal)).collect();
        let norm = d.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        let rho = radius * rng.random::<f64>();
        let y2: Vec<f64> = y1.iter().zip(&d).map(|(a, b)| a + rho * b / norm).collect();
        let (o1, o2) = (Observable::new(y1).unwrap(), Observable::new(y2).unwrap());
        if lsh_key(&f, &o1).unwrap() == lsh_key(&f, &o2).unwrap() {
            hits += 1;
        }
    }
    let rate = hits as f64 / n as f64;
    let se = (0.25 / n as f64).sqrt();
    let locality = rate > 0.5 - 3.0 * se;

    let bank = LshBank::gaussian(ne, &[q; 3], 7).unwrap();
    let at_zero = collision_probability(&bank, &vec![0.0; ne]).unwrap() == 1.0;
    let mut monotone = true;
    for _ in 0..100 {
        let d: Vec<f64> = (0..ne).map(|_| rng.sample(StandardNormal)).collect();
        let mut last = 1.0;
        for step in 0..200 {
            let scale = step as f64 * 0.5;
            let eps: Vec<f64> = d.iter().map(|x| x * scale).collect();
            let p = collision_probability(&bank, &eps).unwrap();
            if p > last {
                monotone = false;
            }
            last = p;
        }
    }
    report.line(
        "7 (LSH locality)",
        locality && at_zero && monotone,
        format!(
            "collision rate {rate:.4} within r = q/2 over {n} pairs (need > {:.4}); P(0) = 1: {at_zero}; monotone on 100 directions: {monotone}",
            0.5 - 3.0 * se
        ),
    );
}

fn criterion_8(report: &mut Report) {
    let params = LorenzParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exponents = Vec::new();
    for _ in 0..5 {
        let s = LorenzState::new(rng.random_range(-15.0..15.0), rng.random_range(-20.0..20.0), rng.random_range(5.0..40.0));
        let dt = params.dt_sample;
        let reference = lorenz_integrate(s, &params, 8.0, dt / 1000.0, 1000);
        let err = |n: u64| lorenz_integrate(s, &params, 8.0, dt / n as f64, n).distance(&reference);
        let (e1, e2) = (err(2), err(4));
        exponents.push((e1 / e2).log2());
    }
    let ok = exponents.iter().all(|p| (3.5..=4.5).contains(p));
    let shown: Vec<String> = exponents.iter().map(|p| format!("{p:.3}")).collect();
    report.line("8 (RK4 order)", ok, format!("measured exponents [{}] (need all in [3.5, 4.5])", shown.join(", ")));
}

fn criterion_9(report: &mut Report) {
    let window = ScalingWindow::default();
    let check = |pts: &[Observable], truth: f64, tol: f64| {
        let radii = log_spaced_radii(1e-3, 2.0, 40).unwrap();
        let est = correlation_dimension(pts, &radii).unwrap();
        let oracle = brute_force_dimension(pts, &radii, window.lo_percentile, window.hi_percentile);
        (est, oracle, (est - truth).abs() <= tol && (est - oracle).abs() < 1e-9)
    };
    let (l_est, l_or, l_ok) = check(&uniform_line(1000, 9), 1.0, 0.1);
    let (s_est, s_or, s_ok) = check(&uniform_square(2000, 9), 2.0, 0.15);
    report.line(
        "9 (correlation dimension)",
        l_ok && s_ok,
        format!("line {l_est:.4} (oracle {l_or:.4}, need 1.0 ± 0.1); square {s_est:.4} (oracle {s_or:.4}, need 2.0 ± 0.15)"),
    );
}

fn learned_document(cfg: &ExperimentConfig, seed: u64) -> (Artifacts, String) {
    let source = PlantSource::from_config(&cfg.plant).unwrap();
    let mut plant = source.open(seed).unwrap();
    let (artifacts, cal, learned) = runner::run_pipeline(&mut plant, cfg, seed).unwrap();
    let mut prov = Provenance::new(seed);
    prov.calibration_ticks = cal.samples.len() as u64;
    prov.reward_ticks = learned.stats.reward_ticks;
    prov.q_ticks = learned.stats.q_ticks;
    let json = ModelDocument::from_artifacts(&artifacts, Stage::Learned, prov).to_json();
    (artifacts, json)
}

fn criterion_10(report: &mut Report, cfg: &ExperimentConfig) {
    let (a1, doc1) = learned_document(cfg, 3);
    let (_, doc2) = learned_document(cfg, 3);
    let opts = cost_options(cfg).rollout;
    let source = PlantSource::from_config(&cfg.plant).unwrap();
    let csv = || {
        runner::rollout(&mut source.open(3).unwrap(), &a1, PolicyKind::Learned, opts)
            .unwrap()
            .to_csv_string(true)
    };
    let same_doc = doc1 == doc2;
    let same_csv = csv() == csv();
    let loaded = ModelDocument::from_json(&doc1).unwrap();
    let lossless = loaded.to_artifacts().unwrap() == a1 && loaded.to_json() == doc1;
    report.line(
        "10 (determinism and persistence)",
        same_doc && same_csv && lossless,
        format!("byte-identical documents: {same_doc}; byte-identical episode CSVs: {same_csv}; lossless round trip: {lossless}"),
    );
}

fn criterion_11(report: &mut Report, cfg: &ExperimentConfig) {
    let (artifacts, _) = learned_document(cfg, 5);
    let opts = cost_options(cfg).rollout;
    let source = PlantSource::from_config(&cfg.plant).unwrap();
    let mut recorder = RecordingPlant::new(source.open(5).unwrap());
    let built_in = runner::rollout(&mut recorder, &artifacts, PolicyKind::Learned, opts).unwrap();
    let trace: PlantTrace = recorder.trace().clone();

    // In-process replay over the wire protocol.
    let (ctl_read, plant_write) = std::io::pipe().unwrap();
    let (plant_read, ctl_write) = std::io::pipe().unwrap();
    let rows = trace.rows.clone();
    let server = thread::spawn(move || {
        serve(BufReader::new(plant_read), plant_write, "replay", |tick, a| {
            let row = rows[tick as usize - 1];
            assert_eq!(row.action.to_bits(), a.to_bits(), "action mismatch at tick {tick}");
            Ok((row.sensor, row.performance))
        })
    });
    let mut external = ExternalPlant::connect(ctl_read, ctl_write, cfg.plant.dt(), Duration::from_secs(30)).unwrap();
    let replayed = runner::rollout(&mut external, &artifacts, PolicyKind::Learned, opts).unwrap();
    drop(external);
    let served = server.join().unwrap().unwrap();

    // Same through the shipped replay plant as a subprocess.
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("trace.csv");
    trace.write_csv(&trace_path).unwrap();
    let command = format!("{} serve-replay --trace {}", env!("CARGO_BIN_EXE_lshctl"), trace_path.display());
    let exec = PlantSource::Exec { command, dt: cfg.plant.dt(), timeout: Duration::from_secs(30) };
    let via_process = runner::rollout(&mut exec.open(0).unwrap(), &artifacts, PolicyKind::Learned, opts).unwrap();

    let strip = |log: &EpisodeLog| {
        let mut log = log.clone();
        log.rows.iter_mut().for_each(|r| r.x = None);
        log
    };
    let reference = strip(&built_in);
    let in_process = strip(&replayed) == reference;
    let subprocess = strip(&via_process) == reference;
    report.line(
        "11 (wire protocol record/replay)",
        in_process && subprocess && served as usize == trace.rows.len(),
        format!(
            "{} logged rows over {} plant ticks; in-process replay identical: {in_process}; subprocess replay identical: {subprocess}",
            built_in.len(),
            trace.rows.len()
        ),
    );
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let reference = fixture("lorenz_reference.toml");
    let chaotic = fixture("lorenz_chaotic.toml");

    lorenz_criteria(&mut report, &reference, "r=20", true);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report, &reference);
    criterion_11(&mut report, &reference);
    lorenz_criteria(&mut report, &chaotic, "r=28", false);

    println!("{} criteria failed", report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
