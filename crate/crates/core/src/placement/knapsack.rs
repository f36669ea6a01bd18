//! 0/1 knapsack: exact dynamic programming and a ratio-greedy fallback.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Item {
    pub weight: u64,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub value: u64,
    pub weight: u64,
    pub chosen: Vec<bool>,
}

impl Selection {
    fn from_mask(items: &[Item], chosen: Vec<bool>) -> Self {
        let (value, weight) = items
            .iter()
            .zip(&chosen)
            .filter(|(_, &c)| c)
            .fold((0, 0), |(v, w), (it, _)| (v + it.value, w + it.weight));
        Selection { value, weight, chosen }
    }
}

/// Exact solution by DP over capacities `0..=min(capacity, Σ weights)`.
/// Among optimal subsets, earlier items are preferred.
pub fn solve_dp(items: &[Item], capacity: u64) -> Selection {
    let total: u64 = items.iter().map(|i| i.weight).sum();
    let cap = capacity.min(total) as usize;
    let n = items.len();
    // best[i][c]: optimum over items[i..] with capacity c.
    let mut best = vec![vec![0u64; cap + 1]; n + 1];
    for i in (0..n).rev() {
        let (w, v) = (items[i].weight as usize, items[i].value);
        for c in 0..=cap {
            let skip = best[i + 1][c];
            best[i][c] = if w <= c { skip.max(best[i + 1][c - w] + v) } else { skip };
        }
    }
    let mut chosen = vec![false; n];
    let mut c = cap;
    for i in 0..n {
        let w = items[i].weight as usize;
        if w <= c && best[i][c] == best[i + 1][c - w] + items[i].value {
            chosen[i] = true;
            c -= w;
        }
    }
    Selection::from_mask(items, chosen)
}

/// Takes items in decreasing value/weight order while they fit. Ties keep
/// the input order.
pub fn solve_greedy(items: &[Item], capacity: u64) -> Selection {
    let mut order: Vec<usize> = (0..items.len()).collect();
    // a.v / a.w > b.v / b.w  <=>  a.v * b.w > b.v * a.w; zero weights first.
    order.sort_by(|&a, &b| {
        let (x, y) = (&items[a], &items[b]);
        let lhs = u128::from(y.value) * u128::from(x.weight);
        let rhs = u128::from(x.value) * u128::from(y.weight);
        lhs.cmp(&rhs).then(a.cmp(&b))
    });
    let mut chosen = vec![false; items.len()];
    let mut left = capacity;
    for i in order {
        if items[i].weight <= left {
            chosen[i] = true;
            left -= items[i].weight;
        }
    }
    Selection::from_mask(items, chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(items: &[Item], cap: u64) -> u64 {
        (0u32..1 << items.len())
            .filter_map(|m| {
                let (w, v) = (0..items.len())
                    .filter(|i| m >> i & 1 == 1)
                    .fold((0, 0), |(w, v), i| (w + items[i].weight, v + items[i].value));
                (w <= cap).then_some(v)
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn three_array_instance() {
        // A 512 B, B 768 B, C 256 B at 32 units/B; budget holds 1024 B.
        let items = [
            Item { weight: 512 * 32, value: 1500 },
            Item { weight: 768 * 32, value: 1400 },
            Item { weight: 256 * 32, value: 1500 },
        ];
        let s = solve_dp(&items, 1024 * 32);
        assert_eq!(s.chosen, vec![true, false, true]);
        assert_eq!(s.value, brute_force(&items, 1024 * 32));
    }

    #[test]
    fn empty_capacity() {
        let items = [Item { weight: 3, value: 9 }];
        assert_eq!(solve_dp(&items, 0).chosen, vec![false]);
        assert_eq!(solve_greedy(&items, 0).chosen, vec![false]);
    }

    proptest::proptest! {
        #[test]
        fn dp_matches_enumeration(
            raw in proptest::collection::vec((1u64..60, 0u64..100), 0..10),
            cap in 0u64..300,
        ) {
            let items: Vec<Item> = raw.iter().map(|&(weight, value)| Item { weight, value }).collect();
            let dp = solve_dp(&items, cap);
            proptest::prop_assert!(dp.weight <= cap);
            proptest::prop_assert_eq!(dp.value, brute_force(&items, cap));
            proptest::prop_assert!(solve_greedy(&items, cap).value <= dp.value);
        }
    }
}
