use adversarial_examiner::bo::{BoExaminer, KernelConfig, UcbConfig};
use adversarial_examiner::numerics::stream;
use adversarial_examiner::rl::{permute_factor_order, RlConfig, RlExaminer};
use adversarial_examiner::targets::{grid_oracle, AnalyticLandscape};
use adversarial_examiner::{
    examiner_metric, read_traces_jsonl, run_examination, Direction, ExamTrace, Examiner, MetricMode,
    RandomExaminer, Result, Scenario, TargetQuery,
};

/// Replays a fixed list of scenarios.
struct Scripted {
    queue: Vec<Scenario>,
    seen: Vec<(Scenario, f64)>,
}

impl Examiner for Scripted {
    fn generate(&mut self) -> Result<Scenario> {
        Ok(self.queue.remove(0))
    }

    fn update(&mut self, scenario: &Scenario, reward: f64) -> Result<()> {
        self.seen.push((scenario.clone(), reward));
        Ok(())
    }
}

fn examiners(land: &AnalyticLandscape, seed: u64) -> Vec<(&'static str, Box<dyn Examiner>)> {
    let space = land.space.clone();
    vec![
        ("random", Box::new(RandomExaminer::new(space.clone(), stream(seed, 1)))),
        (
            "rl",
            Box::new(RlExaminer::new(space.clone(), RlConfig::desk_scale(), stream(seed, 1)).unwrap()),
        ),
        (
            "bo",
            Box::new(BoExaminer::new(space, KernelConfig::default(), UcbConfig::default(), stream(seed, 1)).unwrap()),
        ),
    ]
}

#[test]
fn scripted_examiner_sees_direct_evaluations() {
    let land = &AnalyticLandscape::suite_3d()[1];
    let script: Vec<Scenario> = vec![
        Scenario::new(vec![0.2, 0.5, 3.0]),
        Scenario::new(vec![0.8, -0.6, 8.5]),
        Scenario::new(vec![0.0, -1.0, 0.0]),
        Scenario::new(vec![1.0, 1.0, 10.0]),
        Scenario::new(vec![0.45, 0.0, 1.0]),
    ];
    let mut ex = Scripted {
        queue: script.clone(),
        seen: Vec::new(),
    };
    let trace = run_examination(land, &mut ex, 5, "three-bump").unwrap();
    for (i, s) in script.iter().enumerate() {
        let direct = land.evaluate(s);
        assert_eq!(trace.steps[i].scenario, *s);
        assert_eq!(trace.steps[i].loss, direct);
        assert_eq!(ex.seen[i], (s.clone(), direct));
    }
}

#[test]
fn best_metric_is_bounded_by_the_grid_and_grows_with_t() {
    for land in AnalyticLandscape::suite_3d() {
        let (_, grid_max) = grid_oracle(&land, &land.space, 101).unwrap();
        for (name, mut ex) in examiners(&land, 2) {
            let trace = run_examination(&land, &mut ex, 60, &land.name).unwrap();
            assert!(trace.steps.iter().all(|s| land.space.contains(&s.scenario)));
            let best = examiner_metric(std::slice::from_ref(&trace), MetricMode::Best).unwrap();
            assert!(best <= grid_max, "{name} on {}: {best} > {grid_max}", land.name);
            let mut last = f64::NEG_INFINITY;
            for t in 1..=60 {
                let m = examiner_metric(&[trace.prefix(t).unwrap()], MetricMode::Best).unwrap();
                assert!(m >= last);
                last = m;
            }
        }
    }
}

#[test]
fn examinations_are_reproducible() {
    let land = &AnalyticLandscape::suite_3d()[2];
    let run = |seed| -> Vec<ExamTrace> {
        examiners(land, seed)
            .into_iter()
            .map(|(_, mut ex)| run_examination(land, &mut ex, 40, "ridge").unwrap())
            .collect()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn traces_round_trip_through_jsonl() {
    let land = &AnalyticLandscape::suite_3d()[0];
    let mut buf = Vec::new();
    let mut originals = Vec::new();
    for (name, mut ex) in examiners(land, 4) {
        let trace = run_examination(land, &mut ex, 25, name).unwrap();
        trace.write_jsonl(&mut buf).unwrap();
        originals.push(trace);
    }
    let parsed = read_traces_jsonl(buf.as_slice(), Direction::Weakness).unwrap();
    assert_eq!(parsed, originals);
}

#[test]
fn rl_factor_order_barely_matters_on_a_landscape() {
    let land = &AnalyticLandscape::suite_3d()[0];
    let base = RlConfig::desk_scale();
    let reversed = permute_factor_order(&base, &[2, 1, 0]).unwrap();
    let mut gap = 0.0;
    for seed in 0..3 {
        let mut a = RlExaminer::new(land.space.clone(), base.clone(), stream(seed, 1)).unwrap();
        let mut b = RlExaminer::new(land.space.clone(), reversed.clone(), stream(seed, 1)).unwrap();
        let ta = run_examination(land, &mut a, 300, "a").unwrap();
        let tb = run_examination(land, &mut b, 300, "b").unwrap();
        gap += (ta.best_loss - tb.best_loss).abs() / 3.0;
    }
    assert!(gap < 0.1, "{gap}");
}
