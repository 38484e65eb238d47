use std::collections::VecDeque;

use super::InteractionTable;
use crate::error::{Error, Result};

/// Repeatedly removes users and items with fewer than `k` interactions
/// until every survivor has at least `k`, then re-densifies indices while
/// keeping the surviving order.
pub fn k_core_filter(table: &InteractionTable, k: usize) -> Result<InteractionTable> {
    if k == 0 {
        return Err(Error::config("k-core threshold must be at least 1"));
    }
    let (nu, ni) = (table.user_count(), table.item_count());
    let mut user_adj: Vec<Vec<usize>> = vec![Vec::new(); nu];
    let mut item_adj: Vec<Vec<usize>> = vec![Vec::new(); ni];
    for (e, &(u, i)) in table.edges().iter().enumerate() {
        user_adj[u].push(e);
        item_adj[i].push(e);
    }
    let mut user_deg: Vec<usize> = user_adj.iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_adj.iter().map(Vec::len).collect();
    let mut edge_alive = vec![true; table.edges().len()];
    let mut user_alive = vec![true; nu];
    let mut item_alive = vec![true; ni];

    // Peeling queue of (is_user, node).
    let mut queue: VecDeque<(bool, usize)> = VecDeque::new();
    queue.extend((0..nu).filter(|&u| user_deg[u] < k).map(|u| (true, u)));
    queue.extend((0..ni).filter(|&i| item_deg[i] < k).map(|i| (false, i)));
    while let Some((is_user, node)) = queue.pop_front() {
        let alive = if is_user { &mut user_alive[node] } else { &mut item_alive[node] };
        if !*alive {
            continue;
        }
        *alive = false;
        let adj = if is_user { &user_adj[node] } else { &item_adj[node] };
        for &e in adj {
            if !edge_alive[e] {
                continue;
            }
            edge_alive[e] = false;
            let (u, i) = table.edges()[e];
            if is_user {
                item_deg[i] -= 1;
                if item_alive[i] && item_deg[i] < k {
                    queue.push_back((false, i));
                }
            } else {
                user_deg[u] -= 1;
                if user_alive[u] && user_deg[u] < k {
                    queue.push_back((true, u));
                }
            }
        }
    }

    let remap = |alive: &[bool]| -> Vec<Option<usize>> {
        let mut next = 0;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let user_map = remap(&user_alive);
    let item_map = remap(&item_alive);
    let edges: Vec<(usize, usize)> = table
        .edges()
        .iter()
        .zip(&edge_alive)
        .filter(|(_, &a)| a)
        .map(|(&(u, i), _)| (user_map[u].unwrap(), item_map[i].unwrap()))
        .collect();
    if edges.is_empty() {
        return Err(Error::EmptyData(format!("{k}-core filtering removed every interaction")));
    }
    let keep = |ids: &[String], alive: &[bool]| -> Vec<String> {
        ids.iter().zip(alive).filter(|(_, &a)| a).map(|(s, _)| s.clone()).collect()
    };
    Ok(InteractionTable::from_parts(
        keep(table.user_ids(), &user_alive),
        keep(table.item_ids(), &item_alive),
        edges,
    ))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Naive oracle: rescan all edges until no node is below `k`.
    fn naive_core(edges: &[(usize, usize)], k: usize) -> BTreeSet<(usize, usize)> {
        let mut cur: Vec<(usize, usize)> = edges.to_vec();
        loop {
            let mut du = std::collections::HashMap::new();
            let mut di = std::collections::HashMap::new();
            for &(u, i) in &cur {
                *du.entry(u).or_insert(0) += 1;
                *di.entry(i).or_insert(0) += 1;
            }
            let next: Vec<_> = cur.iter().copied().filter(|(u, i)| du[u] >= k && di[i] >= k).collect();
            if next.len() == cur.len() {
                return next.into_iter().collect();
            }
            cur = next;
        }
    }

    fn original_pairs(t: &InteractionTable) -> BTreeSet<(usize, usize)> {
        t.edges()
            .iter()
            .map(|&(u, i)| (t.user_ids()[u].parse().unwrap(), t.item_ids()[i].parse().unwrap()))
            .collect()
    }

    fn random_bipartite(seed: u64, users: usize, items: usize, p: f64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if rng.random_bool(p) {
                    e.push((u, i));
                }
            }
        }
        e
    }

    #[test]
    fn already_dense_table_is_a_fixed_point() {
        let t = InteractionTable::from_indexed(3, 3, (0..3).flat_map(|u| (0..3).map(move |i| (u, i)))).unwrap();
        assert_eq!(k_core_filter(&t, 3).unwrap(), t);
    }

    #[test]
    fn star_graph_empties() {
        let t = InteractionTable::from_indexed(1, 5, (0..5).map(|i| (0, i))).unwrap();
        assert!(matches!(k_core_filter(&t, 2), Err(Error::EmptyData(_))));
        assert!(matches!(k_core_filter(&t, 0), Err(Error::Config(_))));
    }

    #[test]
    fn matches_naive_peeling_on_random_graphs() {
        for seed in 0..30 {
            let edges = random_bipartite(seed, 40, 30, 0.12);
            let t = InteractionTable::from_indexed(40, 30, edges.clone()).unwrap();
            let want = naive_core(&edges, 3);
            match k_core_filter(&t, 3) {
                Ok(f) => {
                    assert_eq!(original_pairs(&f), want, "seed {seed}");
                    assert!(f.user_degrees().iter().all(|&d| d >= 3));
                    assert!(f.item_degrees().iter().all(|&d| d >= 3));
                    assert_eq!(k_core_filter(&f, 3).unwrap(), f, "idempotent");
                }
                Err(Error::EmptyData(_)) => assert!(want.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    proptest! {
        #[test]
        fn invariant_under_edge_permutation(seed in 0u64..500, shuffle_seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let edges = random_bipartite(seed, 20, 15, 0.25);
            prop_assume!(!edges.is_empty());
            let mut shuffled = edges.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let a = InteractionTable::from_indexed(20, 15, edges).unwrap();
            let b = InteractionTable::from_indexed(20, 15, shuffled).unwrap();
            match (k_core_filter(&a, 2), k_core_filter(&b, 2)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(original_pairs(&x), original_pairs(&y)),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one ordering emptied, the other did not"),
            }
        }
    }
}
