use ic2vqa::adapters::{make_toy_metric, ToyKind, VideoQualityMetric};
use ic2vqa::attack::{AttackConfig, AttackKind};
use ic2vqa::eval::{run_grid, AttackPlan, GridOptions, Journal};
use ic2vqa::media::{synthetic_clip, VideoClip};

fn videos(n: u64) -> Vec<VideoClip> {
    (0..n).map(|i| synthetic_clip(i, 3, 8, 8).unwrap()).collect()
}

fn vqa() -> ic2vqa::Result<Box<dyn VideoQualityMetric>> {
    Ok(Box::new(make_toy_metric(7, ToyKind::Vqa, 2).into_vqa().unwrap()))
}

fn ic2vqa_plan() -> AttackPlan {
    let mut t = AttackConfig::new(AttackKind::Ic2vqa, 0.0, 0);
    t.loss.use_embed = false;
    t.loss.layer_per_metric.insert("toy-iqa-7".into(), 2);
    let mut plan = AttackPlan::new("ic2vqa", t);
    plan.metrics.push(Box::new(make_toy_metric(7, ToyKind::Iqa, 2).into_iqa().unwrap()));
    plan
}

#[test]
fn single_cell_grid() {
    let t = run_grid(&videos(1), &ic2vqa_plan(), &[0.01], &[1], &vqa, GridOptions::default(), None, &mut |_| Ok(()))
        .unwrap();
    assert_eq!(t.records.len(), 1);
}

#[test]
fn zero_budget_leaves_the_score_alone() {
    let t = run_grid(&videos(2), &ic2vqa_plan(), &[0.0, 0.02], &[2], &vqa, GridOptions { workers: 2 }, None, &mut |_| Ok(()))
        .unwrap();
    for r in t.records.iter().filter(|r| r.epsilon == 0.0) {
        assert_eq!(r.attacked_score, Some(r.clean_score));
    }
    assert!(t.records.iter().any(|r| r.epsilon > 0.0 && r.attacked_score != Some(r.clean_score)));
}

#[test]
fn failing_cells_are_recorded() {
    let mut plan = AttackPlan::new("pgd", AttackConfig::new(AttackKind::Pgd, 0.0, 0));
    plan.metrics.push(Box::new(make_toy_metric(1, ToyKind::Iqa, 2).into_iqa().unwrap()));
    plan.metrics.push(Box::new(make_toy_metric(2, ToyKind::Iqa, 2).into_iqa().unwrap()));
    let t = run_grid(&videos(1), &plan, &[0.01, 0.02], &[1], &vqa, GridOptions::default(), None, &mut |_| Ok(()))
        .unwrap();
    assert_eq!(t.records.len(), 2);
    assert!(t.records.iter().all(|r| r.attacked_score.is_none() && r.error.is_some()));
}

#[test]
fn interrupted_grid_resumes_to_identical_table() {
    let dir = tempfile::tempdir().unwrap();
    let eps = [0.0, 1.0 / 255.0, 4.0 / 255.0];
    let its = [1, 3];
    let plan = ic2vqa_plan();
    let vids = videos(2);

    let full_path = dir.path().join("full.jsonl");
    let mut journal = Journal::open(&full_path).unwrap();
    let full = run_grid(&vids, &plan, &eps, &its, &vqa, GridOptions::default(), Some(&mut journal), &mut |_| Ok(()))
        .unwrap();
    full.write_jsonl(dir.path().join("a.jsonl")).unwrap();

    // Keep the first five cells plus half of a sixth line.
    let text = std::fs::read_to_string(&full_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let partial = dir.path().join("partial.jsonl");
    std::fs::write(&partial, lines[..5].join("\n") + "\n" + &lines[5][..10]).unwrap();
    let mut journal = Journal::open(&partial).unwrap();
    let mut fresh = 0;
    let resumed = run_grid(&vids, &plan, &eps, &its, &vqa, GridOptions { workers: 2 }, Some(&mut journal), &mut |_| {
        fresh += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(fresh, 12 - 5);
    resumed.write_jsonl(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}
