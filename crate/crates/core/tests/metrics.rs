//! Agreement and sleep-measure checks against direct formula oracles.

use sleepfuse::data::{Hypnogram, Stage};
use sleepfuse::metrics::{
    class_metrics, confusion, kappa, measures_mae, sleep_measures, ConfusionMatrix,
};
use sleepfuse::nn::SeededRng;

/// κ from integer marginals: (N·trace − Σ r·c) / (N² − Σ r·c).
fn kappa_direct(m: &[Vec<u64>]) -> f64 {
    let k = m.len();
    let n: u128 = m.iter().flatten().map(|v| *v as u128).sum();
    let trace: u128 = (0..k).map(|i| m[i][i] as u128).sum();
    let chance: u128 = (0..k)
        .map(|i| {
            let r: u128 = m[i].iter().map(|v| *v as u128).sum();
            let c: u128 = m.iter().map(|row| row[i] as u128).sum();
            r * c
        })
        .sum();
    ((n * trace) as f64 - chance as f64) / ((n * n) as f64 - chance as f64)
}

fn random_matrix(rng: &mut SeededRng) -> Vec<Vec<u64>> {
    (0..4)
        .map(|_| (0..4).map(|_| rng.below(60) as u64).collect())
        .collect()
}

fn random_stages(rng: &mut SeededRng, n: usize) -> Vec<Stage> {
    (0..n).map(|_| Stage::ALL[rng.below(4)]).collect()
}

#[test]
fn kappa_matches_direct_formula_on_random_matrices() {
    let mut rng = SeededRng::new(17);
    let mut checked = 0;
    for _ in 0..1000 {
        let m = random_matrix(&mut rng);
        if m.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let got = kappa(&ConfusionMatrix::from_counts(m.clone()).unwrap()).unwrap();
        let want = kappa_direct(&m);
        assert!((got - want).abs() < 1e-12, "{m:?}: {got} vs {want}");
        checked += 1;
    }
    assert!(checked >= 990);
}

#[test]
fn kappa_boundary_identities() {
    let perfect = ConfusionMatrix::from_counts(vec![
        vec![7, 0, 0, 0],
        vec![0, 3, 0, 0],
        vec![0, 0, 9, 0],
        vec![0, 0, 0, 1],
    ])
    .unwrap();
    assert_eq!(kappa(&perfect).unwrap(), 1.0);
    let constant = ConfusionMatrix::from_counts(vec![
        vec![0, 5, 0, 0],
        vec![0, 8, 0, 0],
        vec![0, 2, 0, 0],
        vec![0, 4, 0, 0],
    ])
    .unwrap();
    assert!(kappa(&constant).unwrap().abs() < 1e-15);
    let two = ConfusionMatrix::from_counts(vec![vec![10, 2], vec![3, 5]]).unwrap();
    assert!((kappa(&two).unwrap() - kappa_direct(&two.counts)).abs() < 1e-12);
    assert!(kappa(&ConfusionMatrix::zeros(4)).is_err());
}

#[test]
fn kappa_one_iff_no_off_diagonal() {
    let mut rng = SeededRng::new(3);
    for _ in 0..200 {
        let m = random_matrix(&mut rng);
        let off: u64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[i][j]).sum();
        if m.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let k = kappa(&ConfusionMatrix::from_counts(m).unwrap()).unwrap();
        assert_eq!(k == 1.0, off == 0);
    }
}

#[test]
fn kappa_invariant_to_label_permutation() {
    let mut rng = SeededRng::new(8);
    let perm = [Stage::Rem, Stage::Wake, Stage::Deep, Stage::Light];
    for _ in 0..50 {
        let truth = random_stages(&mut rng, 80);
        let pred = random_stages(&mut rng, 80);
        let a = kappa(&confusion(&pred, &truth).unwrap()).unwrap();
        let p2: Vec<Stage> = pred.iter().map(|s| perm[s.index()]).collect();
        let t2: Vec<Stage> = truth.iter().map(|s| perm[s.index()]).collect();
        let b = kappa(&confusion(&p2, &t2).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn confusion_counts_pairs() {
    let mut rng = SeededRng::new(1);
    let truth = random_stages(&mut rng, 100);
    let pred = random_stages(&mut rng, 100);
    let cm = confusion(&pred, &truth).unwrap();
    for t in Stage::ALL {
        for p in Stage::ALL {
            let n = truth.iter().zip(&pred).filter(|(a, b)| **a == t && **b == p).count() as u64;
            assert_eq!(cm.counts[t.index()][p.index()], n);
        }
    }
    let same = confusion(&truth, &truth).unwrap();
    assert_eq!(same.trace(), 100);
    assert!(confusion(&[], &[]).is_err());
    assert!(confusion(&pred[..3], &truth).is_err());
}

#[test]
fn class_metrics_against_hand_formulas() {
    let mut rng = SeededRng::new(4);
    for _ in 0..100 {
        let m = random_matrix(&mut rng);
        let cm = ConfusionMatrix::from_counts(m.clone()).unwrap();
        if cm.total() == 0 {
            continue;
        }
        let r = class_metrics(&cm);
        for c in 0..4 {
            let tp = m[c][c] as f64;
            let row: f64 = m[c].iter().sum::<u64>() as f64;
            let col: f64 = m.iter().map(|x| x[c]).sum::<u64>() as f64;
            let rec = if row > 0.0 { tp / row } else { 0.0 };
            let prec = if col > 0.0 { tp / col } else { 0.0 };
            let f1 = if tp > 0.0 { 2.0 * tp / (row + col) } else { 0.0 };
            assert!((r.per_class[c].recall - rec).abs() < 1e-12);
            assert!((r.per_class[c].precision - prec).abs() < 1e-12);
            assert!((r.per_class[c].f1 - f1).abs() < 1e-12);
        }
        assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
    }
}

#[test]
fn class_metrics_perfect_and_absent_stage() {
    let truth = [Stage::Wake, Stage::Light, Stage::Deep, Stage::Rem];
    let r = class_metrics(&confusion(&truth, &truth).unwrap());
    assert!(r.per_class.iter().all(|c| c.recall == 1.0 && c.f1 == 1.0 && !c.degenerate));
    assert_eq!(r.accuracy, 1.0);
    let truth = [Stage::Wake, Stage::Light];
    let r = class_metrics(&confusion(&truth, &truth).unwrap());
    assert_eq!(r.per_class[Stage::Deep.index()].recall, 0.0);
    assert!(r.per_class[Stage::Deep.index()].degenerate);
}

fn night(w: usize, l: usize, d: usize, r: usize) -> Vec<Stage> {
    [(Stage::Wake, w), (Stage::Light, l), (Stage::Deep, d), (Stage::Rem, r)]
        .iter()
        .flat_map(|(s, n)| std::iter::repeat_n(*s, *n))
        .collect()
}

#[test]
fn sleep_measures_worked_example() {
    let m = sleep_measures(&night(100, 500, 200, 160)).unwrap();
    assert!((m.tst_min - 430.0).abs() < 0.01);
    assert!((m.se_pct - 89.583).abs() < 0.01);
    assert!((m.fr_light_pct - 58.14).abs() < 0.01);
    assert!(!m.degenerate);
}

#[test]
fn sleep_measures_match_counting_oracle() {
    let mut rng = SeededRng::new(12);
    for _ in 0..1000 {
        let n = 1 + rng.below(1200);
        let h = random_stages(&mut rng, n);
        let m = sleep_measures(&h).unwrap();
        let mut counts = [0.0; 4];
        for s in &h {
            counts[s.index()] += 1.0;
        }
        let tst = (counts[1] + counts[2] + counts[3]) / 2.0;
        if tst > 0.0 {
            assert!((m.fr_light_pct + m.fr_deep_pct + m.fr_rem_pct - 100.0).abs() < 1e-9);
            assert!((m.tst_min - tst).abs() < 1e-12);
            assert!((m.se_pct - tst / (n as f64 / 2.0) * 100.0).abs() < 1e-9);
            assert!((m.fr_deep_pct - counts[2] / 2.0 / tst * 100.0).abs() < 1e-9);
            assert!((0.0..=100.0).contains(&m.se_pct));
        } else {
            assert!(m.degenerate);
        }
    }
}

#[test]
fn sleep_measures_reorder_invariant() {
    let mut rng = SeededRng::new(6);
    let mut h = random_stages(&mut rng, 300);
    let a = sleep_measures(&h).unwrap();
    rng.shuffle(&mut h);
    assert_eq!(a, sleep_measures(&h).unwrap());
}

#[test]
fn mae_examples() {
    let a = Hypnogram::new("a", night(10, 40, 20, 10));
    assert!(measures_mae(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap().values().iter().all(|v| *v == 0.0));

    // 20 more Light epochs in the prediction is 10 more minutes of sleep.
    let more = Hypnogram::new("a", night(10, 60, 20, 10));
    let less = Hypnogram::new("a", night(10, 40, 20, 10));
    assert!((measures_mae(&[more], &[less]).unwrap().tst_min - 10.0).abs() < 1e-12);

    let mut rng = SeededRng::new(30);
    let (mut preds, mut refs) = (Vec::new(), Vec::new());
    let mut sums = [0.0; 5];
    for i in 0..5 {
        let id = format!("s{i}");
        let p = Hypnogram::new(id.clone(), random_stages(&mut rng, 200));
        let r = Hypnogram::new(id, random_stages(&mut rng, 200));
        let (mp, mr) = (sleep_measures(&p.stages).unwrap(), sleep_measures(&r.stages).unwrap());
        for (k, s) in sums.iter_mut().enumerate() {
            *s += (mp.values()[k] - mr.values()[k]).abs();
        }
        preds.push(p);
        refs.push(r);
    }
    let mae = measures_mae(&preds, &refs).unwrap();
    for (got, s) in mae.values().iter().zip(sums) {
        assert!((got - s / 5.0).abs() < 1e-12);
    }
    assert!(measures_mae(&preds[..2], &refs).is_err());
}
