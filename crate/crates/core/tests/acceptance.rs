//! One PASS/FAIL line per acceptance criterion, written straight to stderr
//! so the report shows up without `--nocapture`.

use std::cell::RefCell;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selffeed::agent::Agent;
use selffeed::data::{map_rating_to_label, DatasetSplit, Label, Record, Source, Split, Task};
use selffeed::eval::*;
use selffeed::nn::{encode_checkpoint, lr_at, AdaMaxConfig, EncoderConfig};
use selffeed::selffeed::{
    step, ControllerConfig, ControllerError, ConversationState, Mode, Models, ACK_AND_TOPIC,
    FEEDBACK_QUESTION,
};
use selffeed::sim::*;
use selffeed::text::{Utterance, Vocabulary};
use selffeed::train::{train, TaskSpec, TrainConfig};

mod support;

use support::gradcheck::{classification_check, ranking_check, CoordinateCheck};
use support::oracles::{brute_max_f1, brute_rank, REGEX_SUITE};
use support::tiny_world;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(name: &str, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let _ = writeln!(std::io::stderr(), "{tag} {name}: {detail} [{secs:.1}s]");
    result.is_ok()
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut informative = usize::MAX;
    for seed in [1, 2, 3] {
        let sets: [Vec<CoordinateCheck>; 2] = [
            ranking_check(1, 120, seed),
            classification_check(1, 120, seed),
        ];
        for checks in &sets {
            informative = informative.min(checks.iter().filter(|c| c.is_informative()).count());
            worst = checks
                .iter()
                .map(|c| c.relative_error())
                .fold(worst, f64::max);
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= 1e-4 && informative >= 50 && elapsed < Duration::from_secs(60),
        format!("worst rel err {worst:.2e}, min informative coords {informative}"),
    )
}

/// Replays fixed score tables.
struct Fixed(Vec<Vec<f64>>);

impl Scorer for Fixed {
    fn score(
        &self,
        index: usize,
        _: &[Utterance],
        _: &[String],
        _: Task,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(self.0[index].clone())
    }
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..200 {
        let n = rng.gen_range(1..12);
        let size = rng.gen_range(2..25);
        let k = rng.gen_range(1..=size);
        let records = (0..n)
            .map(|i| {
                Record::dialogue(
                    Split::Test,
                    vec![Utterance::human(format!("c{i}"))],
                    format!("t{i}"),
                    Source::HH,
                )
            })
            .collect();
        let split = DatasetSplit::new(Task::Dialogue, Split::Test, records);
        let tables: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..size).map(|_| rng.gen_range(0..6) as f64).collect())
            .collect();
        let assignments: Vec<Assignment> = (0..n)
            .map(|_| Assignment {
                candidates: (0..size).map(|j| format!("cand{j}")).collect(),
                gold: rng.gen_range(0..size),
            })
            .collect();
        let got =
            hits_at(&Fixed(tables.clone()), &split, &assignments, k).map_err(|e| e.to_string())?;
        let hit = tables
            .iter()
            .zip(&assignments)
            .filter(|(s, a)| brute_rank(s, a.gold) <= k)
            .count();
        let want = hit as f64 / n as f64;
        if got != want {
            return Err(format!("hits instance {instance}: {got} vs brute {want}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let mut checked = 0;
    while checked < 100 {
        let n = rng.gen_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if !labels.contains(&1) {
            continue;
        }
        let got = max_f1_sweep(&scores, &labels)
            .map_err(|e| e.to_string())?
            .f1;
        let want = brute_max_f1(&scores, &labels);
        if (got - want).abs() > 1e-9 {
            return Err(format!("F1 instance {checked}: {got} vs brute {want}"));
        }
        checked += 1;
    }

    let records = (0..10_000)
        .map(|i| {
            Record::dialogue(
                Split::Test,
                vec![Utterance::human(format!("c{i}"))],
                format!("t{i}"),
                Source::HH,
            )
        })
        .collect();
    let split = DatasetSplit::new(Task::Dialogue, Split::Test, records);
    let assignments =
        assign_static_candidates(&split, STATIC_CANDIDATES, 3).map_err(|e| e.to_string())?;
    let hits =
        hits_at(&RandomScorer { seed: 17 }, &split, &assignments, 1).map_err(|e| e.to_string())?;
    let sigma = (0.05f64 * 0.95 / 10_000.0).sqrt();
    ensure(
        (hits - 0.05).abs() <= 3.0 * sigma,
        format!(
            "200 hits + 100 F1 instances exact; random hits@1/20 = {hits:.4} (0.05 ± {:.4})",
            3.0 * sigma
        ),
    )
}

fn regex_baseline() -> Check {
    let re = DissatisfactionRegex::default();
    let mismatches: Vec<&str> = REGEX_SUITE
        .iter()
        .filter(|(text, expected)| re.matching(text) != expected.to_vec())
        .map(|(text, _)| *text)
        .collect();
    ensure(
        re.len() == 6 && mismatches.is_empty(),
        format!(
            "{} patterns, {} strings, mismatches {mismatches:?}",
            re.len(),
            REGEX_SUITE.len()
        ),
    )
}

fn rating_mapping() -> Check {
    let got: Vec<Option<Label>> = (1..=5).map(|r| map_rating_to_label(r).unwrap()).collect();
    let want = vec![
        Some(Label::Negative),
        None,
        Some(Label::Positive),
        Some(Label::Positive),
        Some(Label::Positive),
    ];
    let out_of_range = map_rating_to_label(0).is_err() && map_rating_to_label(6).is_err();
    ensure(got == want && out_of_range, format!("{got:?}"))
}

fn lr_schedule() -> Check {
    let cfg = AdaMaxConfig::default();
    let b = 0.0025;
    let cases = [
        (lr_at(500, b, cfg.warmup_steps, cfg.warmup_floor), b),
        (lr_at(2000, b, cfg.warmup_steps, cfg.warmup_floor), b / 2.0),
        (
            lr_at(1, 0.001, cfg.warmup_steps, cfg.warmup_floor),
            1.198e-5,
        ),
    ];
    let worst = cases.iter().map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure(
        worst <= 1e-12,
        format!(
            "warmup {} floor {:e}, worst abs err {worst:.1e}",
            cfg.warmup_steps, cfg.warmup_floor
        ),
    )
}

fn overfit() -> Check {
    let start = Instant::now();
    let domain =
        SyntheticDomain::generate(WorldConfig::default().domain, 4).map_err(|e| e.to_string())?;
    let mut seen = std::collections::BTreeSet::new();
    let records: Vec<Record> = domain
        .dialogue_split(Split::Train)
        .records
        .into_iter()
        .filter(|r| seen.insert(r.target.clone()))
        .take(32)
        .collect();
    let data = DatasetSplit::new(Task::Dialogue, Split::Train, records.clone());
    let vocab = Arc::new(Vocabulary::build(domain.corpus()));
    let cfg = EncoderConfig {
        embed_dim: 32,
        layers: 1,
        heads: 2,
        ffn_dim: 32,
        max_seq_len: 64,
    };
    let agent = Agent::new(cfg, vocab, 2, 4).map_err(|e| e.to_string())?;
    let train_cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 200,
        patience: 200,
        seed: 4,
        optimizer: AdaMaxConfig {
            base_lr: 0.005,
            warmup_steps: 50,
            ..AdaMaxConfig::default()
        },
    };
    let tasks = [TaskSpec::new(Task::Dialogue, records, 1.0)];
    let (agent, report) =
        train(&agent, &tasks, Some(&data), &train_cfg).map_err(|e| e.to_string())?;
    let assignments =
        assign_static_candidates(&data, STATIC_CANDIDATES, 4).map_err(|e| e.to_string())?;
    let hits =
        hits_at(&AgentScorer::new(&agent), &data, &assignments, 1).map_err(|e| e.to_string())?;
    let first = report
        .epochs
        .iter()
        .find(|e| e.valid_hits1 == Some(1.0))
        .map(|e| e.epoch);
    let elapsed = start.elapsed();
    ensure(
        hits == 1.0 && elapsed < Duration::from_secs(120),
        format!("train hits@1/20 = {hits}, first perfect epoch {first:?}"),
    )
}

/// Fixed satisfaction scores and replies; records every context it sees.
struct Scripted {
    scores: RefCell<Vec<f64>>,
    replies: RefCell<Vec<&'static str>>,
    seen: RefCell<Vec<Vec<Utterance>>>,
}

impl Models for Scripted {
    fn satisfaction(&self, _: &[Utterance]) -> Result<f64, ControllerError> {
        Ok(self.scores.borrow_mut().remove(0))
    }

    fn respond(&self, context: &[Utterance]) -> Result<String, ControllerError> {
        self.seen.borrow_mut().push(context.to_vec());
        Ok(self.replies.borrow_mut().remove(0).to_string())
    }

    fn version(&self) -> u64 {
        5
    }
}

fn controller_protocol() -> Check {
    let bot = Scripted {
        scores: RefCell::new(vec![0.9, 0.1, 0.8]),
        replies: RefCell::new(vec!["i have two dogs.", "nice, what do you paint?"]),
        seen: RefCell::new(Vec::new()),
    };
    let cfg = ControllerConfig::default();
    let mut state = ConversationState::new("trace");
    let run = |state: &mut ConversationState, text: &str| {
        step(state, text, &bot, &cfg).map_err(|e| e.to_string())
    };

    let a = run(&mut state, "what do you do for a living?")?;
    let b = run(&mut state, "i asked about your job, not pets.")?;
    let c = run(&mut state, "you could say you are a teacher.")?;
    let mid_history = state.history.clone();
    let d = run(&mut state, "i like painting.")?;

    let want = vec![
        Utterance::human("what do you do for a living?"),
        Utterance::bot("i have two dogs."),
        Utterance::human("i asked about your job, not pets."),
        Utterance::system(FEEDBACK_QUESTION),
        Utterance::human("you could say you are a teacher."),
        Utterance::system(ACK_AND_TOPIC),
        Utterance::human("i like painting."),
        Utterance::bot("nice, what do you paint?"),
    ];
    let mut problems = Vec::new();
    if state.transcript != want {
        problems.push(format!("transcript {:?}", state.transcript));
    }
    if (a.mode, b.mode, c.mode, d.mode)
        != (
            Mode::Normal,
            Mode::AwaitingFeedback,
            Mode::Normal,
            Mode::Normal,
        )
    {
        problems.push("modes".into());
    }
    if b.reply != FEEDBACK_QUESTION || c.reply != ACK_AND_TOPIC {
        problems.push("bot strings".into());
    }
    if !mid_history.is_empty() || bot.seen.borrow()[1] != vec![Utterance::human("i like painting.")]
    {
        problems.push("history not reset".into());
    }
    let fb = &c.extracted;
    let fb_ok = fb.len() == 1
        && fb[0].x == vec![Utterance::human("what do you do for a living?")]
        && fb[0].target == "you could say you are a teacher."
        && fb[0].model_version == 5;
    if !fb_ok {
        problems.push(format!("feedback example {fb:?}"));
    }
    if !(a.extracted.is_empty() && b.extracted.is_empty() && d.extracted.is_empty()) {
        problems.push("unexpected HB extraction".into());
    }
    ensure(
        problems.is_empty(),
        if problems.is_empty() {
            "8-turn trace matches; feedback x excludes the poor bot turn".into()
        } else {
            problems.join("; ")
        },
    )
}

fn closed_loop() -> Check {
    let start = Instant::now();
    let cfg = WorldConfig::default();
    let report =
        learning_curve_experiment(&cfg, &Arm::standard(), 5, 100).map_err(|e| e.to_string())?;
    let _ = write!(std::io::stderr(), "{}", report.table());
    let hh = report.arm("HH").ok_or("no HH arm")?;
    let full = report.arm("HH+HB+FB").ok_or("no HH+HB+FB arm")?;
    let p = full.vs_first.map(|t| t.p).ok_or("no t-test")?;
    let elapsed = start.elapsed();
    ensure(
        full.mean > hh.mean && p < 0.05 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "HH {:.3} vs HH+HB+FB {:.3} over {} seeds, p = {p:.4}",
            hh.mean,
            full.mean,
            full.values.len()
        ),
    )
}

fn detector_ordering() -> Check {
    let cfg = WorldConfig::default();
    let scores = (0..3)
        .map(|seed| detector_experiment(&cfg, seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mean =
        |f: fn(&DetectorScores) -> f64| scores.iter().map(f).sum::<f64>() / scores.len() as f64;
    let classifier = mean(|s| s.classifier);
    let top = mean(|s| s.uncertainty_top);
    let gap = mean(|s| s.uncertainty_gap);
    let regex = mean(|s| s.regex);
    let margin = classifier - top.max(gap);
    ensure(
        margin >= 0.1,
        format!("classifier {classifier:.3}, uncertainty top {top:.3} gap {gap:.3}, regex {regex:.3}; margin {margin:.3}"),
    )
}

fn freshness() -> Check {
    let cfg = WorldConfig::default();
    let report = freshness_experiment(&cfg, 160, 5, 200, true).map_err(|e| e.to_string())?;
    let _ = write!(std::io::stderr(), "{}", report.table());
    let stale = report.arm("stale").ok_or("no stale arm")?;
    let fresh = report.arm("fresh").ok_or("no fresh arm")?;
    let p = fresh.vs_first.map(|t| t.p).ok_or("no t-test")?;
    ensure(
        fresh.mean >= stale.mean && fresh.values.len() >= 5,
        format!(
            "stale {:.3} vs fresh {:.3} over {} seeds, p = {p:.4}",
            stale.mean,
            fresh.mean,
            fresh.values.len()
        ),
    )
}

fn determinism() -> Check {
    let cfg = tiny_world();
    let fit = || -> Result<(Vec<u8>, Vec<Vec<Utterance>>, String), String> {
        let world = World::build(&cfg, 31).map_err(|e| e.to_string())?;
        let (model, _) = world.bootstrap(&cfg, 31).map_err(|e| e.to_string())?;
        let bytes = encode_checkpoint(&model.agent.params);
        let deployment =
            run_deployment(&model, &world.domain, cfg.user, cfg.deployment.clone(), 32)
                .map_err(|e| e.to_string())?;
        let hits = world.test_hits(&model.agent).map_err(|e| e.to_string())?;
        let record = MetricReport {
            metric: "hits".into(),
            x: STATIC_CANDIDATES,
            y: 1,
            value: hits,
            n: world.test.len(),
            seed: 31,
            model_version: model.agent.version(),
        };
        Ok((
            bytes,
            deployment.transcripts,
            serde_json::to_string(&record).unwrap(),
        ))
    };
    let a = fit()?;
    let b = fit()?;
    let report = |seed| {
        learning_curve_experiment(&cfg, &Arm::standard(), 2, seed)
            .map(|r| serde_json::to_string(&r).unwrap())
    };
    let curves_equal =
        report(5).map_err(|e| e.to_string())? == report(5).map_err(|e| e.to_string())?;
    ensure(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2 && curves_equal,
        format!(
            "checkpoint {} bytes, {} transcripts, metric record {}",
            a.0.len(),
            a.1.len(),
            a.2
        ),
    )
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("gradient-correctness", gradient_check),
        ("metric-oracles", metric_oracles),
        ("regex-baseline", regex_baseline),
        ("rating-mapping", rating_mapping),
        ("lr-schedule", lr_schedule),
        ("overfit", overfit),
        ("controller-protocol", controller_protocol),
        ("closed-loop-improvement", closed_loop),
        ("classifier-vs-uncertainty", detector_ordering),
        ("freshness-direction", freshness),
        ("determinism", determinism),
    ];
    let _ = writeln!(std::io::stderr());
    let failed: Vec<&str> = checks
        .into_iter()
        .filter(|(name, check)| !report(name, check))
        .map(|(name, _)| name)
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
