//! Property tests: the sum tree against a naive array-scan oracle under
//! arbitrary interleavings of leaf writes and prefix queries.

use proptest::prelude::*;

use vrpssr::replay::SumTree;

#[derive(Debug, Clone)]
enum Op {
    /// Write `value` at `leaf` (both drawn modulo the tree size).
    Set { leaf: usize, value: f64 },
    /// Query the cumulative position `fraction * total`.
    Query { fraction: f64 },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<usize>(), 0.0f64..10.0).prop_map(|(leaf, value)| Op::Set { leaf, value }),
        (0.0f64..1.0).prop_map(|fraction| Op::Query { fraction }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sum_tree_matches_array_oracle(
        leaves in 1usize..=64,
        ops in prop::collection::vec(op_strategy(), 1..200),
    ) {
        let mut tree = SumTree::new(leaves);
        let mut naive = vec![0.0f64; leaves];
        for op in ops {
            match op {
                Op::Set { leaf, value } => {
                    let leaf = leaf % leaves;
                    tree.set(leaf, value);
                    naive[leaf] = value;
                }
                Op::Query { fraction } => {
                    let total: f64 = naive.iter().sum();
                    if total <= 0.0 {
                        continue;
                    }
                    let v = fraction * total;
                    let got = tree.prefix_query(v);
                    let mut acc = 0.0;
                    let mut expect = None;
                    // The tree pads to a power of two; padding leaves hold 0
                    // and can only be hit at the extreme right edge, which
                    // the fraction < 1 draw excludes.
                    for (i, p) in naive.iter().enumerate() {
                        if v < acc + p {
                            expect = Some(i);
                            break;
                        }
                        acc += p;
                    }
                    prop_assert_eq!(Some(got), expect);
                }
            }
            let naive_total: f64 = naive.iter().sum();
            prop_assert!((tree.total() - naive_total).abs() <= 1e-9 * naive_total.max(1.0));
            let naive_min = naive
                .iter()
                .copied()
                .filter(|p| *p > 0.0)
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(tree.min_positive(), naive_min);
            let naive_max = naive.iter().copied().fold(0.0f64, f64::max);
            prop_assert_eq!(tree.max_value(), naive_max);
        }
    }
}
