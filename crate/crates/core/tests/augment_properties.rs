mod common;

use std::collections::BTreeSet;

use common::{node_id, RawGraph};
use hfaug::augment::{augment_matrix, AugmentMode, AugmentationConfig};
use hfaug::graph::{AccountId, AccountKind};
use hfaug::matrix::FeatureMatrix;
use hfaug::metapath::MetapathPattern;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 3;

struct Case {
    raw: RawGraph,
    feats: FeatureMatrix,
    targets: Vec<AccountId>,
}

/// Random graph with a full integer-valued feature row per node, so sums are
/// exact and the assertions can use equality.
fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = RawGraph::random(&mut rng, 9);
    let n = raw.kinds.len();
    let ids: Vec<AccountId> = (0..n).map(|i| AccountId::from(node_id(i).as_str())).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..DIM).map(|_| rng.random_range(0..50) as f64).collect())
        .collect();
    let feats = FeatureMatrix::from_rows(ids.clone(), rows, DIM, 'f').unwrap();
    let targets = ids
        .into_iter()
        .enumerate()
        .filter(|(i, _)| raw.kinds[*i] == AccountKind::Ca)
        .map(|(_, id)| id)
        .collect();
    Case { raw, feats, targets }
}

fn config(dedupe: bool) -> AugmentationConfig {
    let mut cfg = AugmentationConfig::new(
        AugmentMode::TargetCa,
        vec![MetapathPattern::p1(), MetapathPattern::p2()],
    );
    cfg.dedupe = dedupe;
    cfg
}

fn rows_by_id(m: &FeatureMatrix) -> Vec<(AccountId, Vec<f64>)> {
    let mut v: Vec<_> = m.ids().iter().cloned().zip((0..m.rows()).map(|i| m.row(i).to_vec())).collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v
}

/// Every node appearing in an instance around `v`, `v` included.
fn reach(raw: &RawGraph, v: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::from([v]);
    for p in [MetapathPattern::p1(), MetapathPattern::p2()] {
        let a = p.target_position().unwrap();
        for (_, nodes, _) in raw.instances(&p, a, v).unwrap() {
            out.extend(nodes);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_is_linear_in_the_features(seed in any::<u64>(), a in -3i32..4, b in -3i32..4, dedupe in any::<bool>()) {
        let c1 = case(seed);
        let c2 = case(seed ^ 0x5555);
        // same graph, second feature set from another seed
        let other = FeatureMatrix::from_flat(
            c1.feats.ids().to_vec(),
            DIM,
            c2.feats.as_flat().iter().cycle().take(c1.feats.as_flat().len()).copied().collect(),
            'f',
        );
        let g = c1.raw.build();
        let cfg = config(dedupe);
        let combo = c1.feats.linear_combination(a as f64, &other, b as f64);
        let (lhs, _) = augment_matrix(&g, &combo, &c1.targets, &cfg).unwrap();
        let (x, _) = augment_matrix(&g, &c1.feats, &c1.targets, &cfg).unwrap();
        let (y, _) = augment_matrix(&g, &other, &c1.targets, &cfg).unwrap();
        let rhs = x.linear_combination(a as f64, &y, b as f64);
        prop_assert_eq!(lhs.as_flat(), rhs.as_flat());
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), shuffle in any::<u64>()) {
        let c = case(seed);
        let g = c.raw.build();
        let mut order: Vec<usize> = (0..c.feats.rows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let ids: Vec<AccountId> = order.iter().map(|i| c.feats.ids()[*i].clone()).collect();
        let rows: Vec<Vec<f64>> = order.iter().map(|i| c.feats.row(*i).to_vec()).collect();
        let shuffled = FeatureMatrix::from_rows(ids, rows, DIM, 'f').unwrap();
        let mut targets = c.targets.clone();
        targets.reverse();
        let (a, _) = augment_matrix(&g, &c.feats, &c.targets, &config(true)).unwrap();
        let (b, _) = augment_matrix(&g, &shuffled, &targets, &config(true)).unwrap();
        prop_assert_eq!(rows_by_id(&a), rows_by_id(&b));
    }

    #[test]
    fn only_reachable_rows_influence_a_target(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let c = case(seed);
        let g = c.raw.build();
        let n = c.raw.kinds.len();
        let u = pick.index(n);
        let mut bumped = c.feats.clone();
        let pos = bumped.position(&AccountId::from(node_id(u).as_str())).unwrap();
        bumped.row_mut(pos)[0] += 1000.0;
        let (before, _) = augment_matrix(&g, &c.feats, &c.targets, &config(true)).unwrap();
        let (after, _) = augment_matrix(&g, &bumped, &c.targets, &config(true)).unwrap();
        for v in (0..n).filter(|v| c.raw.kinds[*v] == AccountKind::Ca) {
            let id = AccountId::from(node_id(v).as_str());
            let delta = after.row_of(&id).unwrap()[0] - before.row_of(&id).unwrap()[0];
            let expected = if reach(&c.raw, v).contains(&u) { 1000.0 } else { 0.0 };
            prop_assert_eq!(delta, expected, "target {} bumped {}", v, u);
        }
    }

    #[test]
    fn counting_repeats_never_lowers_nonnegative_sums(seed in any::<u64>()) {
        let c = case(seed);
        let g = c.raw.build();
        let (dd, _) = augment_matrix(&g, &c.feats, &c.targets, &config(true)).unwrap();
        let (raw, _) = augment_matrix(&g, &c.feats, &c.targets, &config(false)).unwrap();
        for (x, y) in dd.as_flat().iter().zip(raw.as_flat()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn non_targets_keep_their_rows(seed in any::<u64>()) {
        let c = case(seed);
        let g = c.raw.build();
        let (out, report) = augment_matrix(&g, &c.feats, &c.targets, &config(true)).unwrap();
        prop_assert_eq!(report.targets, c.targets.len());
        for (i, id) in c.feats.ids().iter().enumerate() {
            if !c.targets.contains(id) {
                prop_assert_eq!(out.row_of(id).unwrap(), c.feats.row(i));
            }
        }
    }
}
