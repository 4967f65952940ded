/// One-to-one matching between answer statements (rows) and ground-truth statements
/// (columns) of a similarity matrix.
///
/// Candidate pairs with similarity `>= tau` are visited in descending similarity order
/// (ties by row, then column) and a pair is taken when both sides are still free.
/// For pairwise-distinct similarities this yields the matching whose sorted weight
/// sequence is lexicographically largest; its size is at least half the maximum
/// matching size.
pub fn greedy_match(sim: &[Vec<f64>], tau: f64) -> Vec<(usize, usize)> {
    let cols = sim.first().map_or(0, Vec::len);
    let mut candidates: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            debug_assert_eq!(row.len(), cols);
            row.iter()
                .enumerate()
                .filter(move |&(_, &s)| s >= tau)
                .map(move |(j, &s)| (s, i, j))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut row_used = vec![false; sim.len()];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}
