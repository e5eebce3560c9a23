use std::collections::BTreeMap;

use super::GridError;

/// Tree structure of a radial grid rooted at its slack bus.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// Bus indices in breadth-first order from the root.
    pub order: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    /// Index of the edge connecting a bus to its parent.
    pub parent_edge: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    pub children: Vec<Vec<usize>>,
}

impl Topology {
    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Whether `bus` lies in the subtree hanging below `ancestor` (inclusive).
    pub fn is_descendant(&self, bus: usize, ancestor: usize) -> bool {
        let mut cur = Some(bus);
        while let Some(b) = cur {
            if b == ancestor {
                return true;
            }
            cur = self.parent[b];
        }
        false
    }

    /// Buses on the path from the root down to `bus`, root first.
    pub fn path_from_root(&self, bus: usize) -> Vec<usize> {
        let mut path = vec![bus];
        let mut cur = bus;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Checks that `edges` form a spanning tree over `bus_ids` and roots it at `root`.
///
/// Edges are `(edge id, from index, to index)`. The first edge that closes a
/// loop is named in the cycle error; buses not reachable from the root are
/// listed in the disconnected error.
pub fn validate_radial(
    bus_ids: &[String],
    edges: &[(String, usize, usize)],
    root: usize,
) -> Result<Topology, GridError> {
    let n = bus_ids.len();
    let mut dsu = DisjointSet::new(n);
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, (id, a, b)) in edges.iter().enumerate() {
        if !dsu.union(*a, *b) {
            return Err(GridError::Cycle { edge: id.clone() });
        }
        adjacency[*a].push((*b, k));
        adjacency[*b].push((*a, k));
    }

    let mut parent = vec![None; n];
    let mut parent_edge = vec![None; n];
    let mut depth = vec![0; n];
    let mut children = vec![Vec::new(); n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    seen[root] = true;
    order.push(root);
    let mut head = 0;
    while head < order.len() {
        let bus = order[head];
        head += 1;
        for &(next, edge) in &adjacency[bus] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some(bus);
                parent_edge[next] = Some(edge);
                depth[next] = depth[bus] + 1;
                children[bus].push(next);
                order.push(next);
            }
        }
    }

    if order.len() != n {
        let unreachable = (0..n)
            .filter(|&i| !seen[i])
            .map(|i| bus_ids[i].clone())
            .collect();
        return Err(GridError::Disconnected { unreachable });
    }

    Ok(Topology {
        order,
        parent,
        parent_edge,
        depth,
        children,
    })
}

/// Parent and depth maps keyed by bus id, for reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyReport {
    pub parent: BTreeMap<String, String>,
    pub depth: BTreeMap<String, usize>,
}

impl TopologyReport {
    pub fn new(bus_ids: &[String], topology: &Topology) -> Self {
        let parent = topology
            .parent
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (bus_ids[i].clone(), bus_ids[p].clone())))
            .collect();
        let depth = topology
            .depth
            .iter()
            .enumerate()
            .map(|(i, d)| (bus_ids[i].clone(), *d))
            .collect();
        Self { parent, depth }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("b{i}")).collect()
    }

    fn edges(list: &[(usize, usize)]) -> Vec<(String, usize, usize)> {
        list.iter()
            .enumerate()
            .map(|(k, &(a, b))| (format!("e{k}"), a, b))
            .collect()
    }

    #[test]
    fn two_bus_line() {
        let bus_ids = ids(2);
        let topo = validate_radial(&bus_ids, &edges(&[(0, 1)]), 0).unwrap();
        let report = TopologyReport::new(&bus_ids, &topo);
        assert_eq!(report.parent.get("b1").map(String::as_str), Some("b0"));
        assert_eq!(report.depth["b0"], 0);
        assert_eq!(report.depth["b1"], 1);
    }

    #[test]
    fn star_has_unit_depths() {
        let topo = validate_radial(&ids(4), &edges(&[(0, 1), (0, 2), (3, 0)]), 0).unwrap();
        assert_eq!(topo.depth, vec![0, 1, 1, 1]);
    }

    #[test]
    fn disjoint_components_are_reported() {
        let err = validate_radial(&ids(4), &edges(&[(0, 1), (2, 3)]), 0).unwrap_err();
        match err {
            GridError::Disconnected { unreachable } => assert_eq!(unreachable, vec!["b2", "b3"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycle_names_closing_edge() {
        let err = validate_radial(&ids(3), &edges(&[(0, 1), (1, 2), (2, 0)]), 0).unwrap_err();
        assert!(matches!(err, GridError::Cycle { edge } if edge == "e2"));
    }

    #[test]
    fn parallel_edges_are_a_cycle() {
        let err = validate_radial(&ids(2), &edges(&[(0, 1), (1, 0)]), 0).unwrap_err();
        assert!(matches!(err, GridError::Cycle { .. }));
    }

    /// Brute-force spanning-tree check: connected with n-1 edges, via repeated
    /// adjacency-matrix reachability.
    fn is_spanning_tree(n: usize, list: &[(usize, usize)]) -> bool {
        if list.len() != n - 1 {
            return false;
        }
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
        }
        for &(a, b) in list {
            reach[a][b] = true;
            reach[b][a] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        reach[0].iter().all(|&r| r)
    }

    #[test]
    fn accepts_exactly_spanning_trees_on_small_graphs() {
        for n in 2..=5usize {
            let all: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
                .collect();
            let subsets = 1u32 << all.len();
            for mask in 0..subsets {
                let chosen: Vec<(usize, usize)> = all
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, e)| *e)
                    .collect();
                let accepted = validate_radial(&ids(n), &edges(&chosen), 0).is_ok();
                assert_eq!(accepted, is_spanning_tree(n, &chosen), "n={n} edges={chosen:?}");
            }
        }
    }

    #[test]
    fn accepts_spanning_trees_on_six_buses_sampled() {
        // 2^15 subsets; every one is checked against the reachability oracle.
        let n = 6;
        let all: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .collect();
        let mut trees = 0;
        for mask in 0u32..(1 << all.len()) {
            if mask.count_ones() as usize != n - 1 {
                continue;
            }
            let chosen: Vec<(usize, usize)> = all
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, e)| *e)
                .collect();
            let accepted = validate_radial(&ids(n), &edges(&chosen), 0).is_ok();
            assert_eq!(accepted, is_spanning_tree(n, &chosen));
            trees += accepted as usize;
        }
        // Cayley: n^(n-2) labelled trees.
        assert_eq!(trees, 6usize.pow(4));
    }
}
