//! Published index tables, with the misprints corrected.
//!
//! Misprints in the published tables, each contradicting the offset formula
//! and the brute-force enumeration:
//! - 5x4, round 1, row 3 prints 28 for 18.
//! - 2x3x4, round 2, row 2 prints 23 for 13.
//! - 4x3x3x4, round 0, rows 1, 2, 3 print 104, 105, 106 for 105, 106, 107.

/// One printed row. `tail` is empty when the row is printed in full;
/// otherwise `head` and `tail` surround an elision.
pub struct GoldenRow {
    pub dims: &'static [usize],
    pub round: usize,
    pub unit: usize,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
}

fn full(dims: &'static [usize], round: usize, rows: Vec<Vec<usize>>) -> Vec<GoldenRow> {
    rows.into_iter()
        .enumerate()
        .map(|(unit, head)| GoldenRow { dims, round, unit, head, tail: Vec::new() })
        .collect()
}

fn elided(dims: &'static [usize], round: usize, rows: Vec<(Vec<usize>, Vec<usize>)>) -> Vec<GoldenRow> {
    rows.into_iter()
        .enumerate()
        .map(|(unit, (head, tail))| GoldenRow { dims, round, unit, head, tail })
        .collect()
}

pub fn golden_rows() -> Vec<GoldenRow> {
    const A: &[usize] = &[5, 4];
    const B: &[usize] = &[2, 3, 4];
    const C: &[usize] = &[4, 3, 3, 4];
    let mut rows = Vec::new();
    rows.extend(full(
        A,
        0,
        vec![
            vec![0, 5, 10, 15],
            vec![1, 6, 11, 16],
            vec![2, 7, 12, 17],
            vec![3, 8, 13, 18],
            vec![4, 9, 14, 19],
        ],
    ));
    rows.extend(full(
        A,
        1,
        vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9], vec![10, 11, 12, 13, 14], vec![15, 16, 17, 18, 19]],
    ));
    rows.extend(full(
        B,
        0,
        vec![
            vec![0, 6, 12, 18, 2, 8, 14, 20, 4, 10, 16, 22],
            vec![1, 7, 13, 19, 3, 9, 15, 21, 5, 11, 17, 23],
        ],
    ));
    rows.extend(full(
        B,
        1,
        vec![
            vec![0, 1, 6, 7, 12, 13, 18, 19],
            vec![2, 3, 8, 9, 14, 15, 20, 21],
            vec![4, 5, 10, 11, 16, 17, 22, 23],
        ],
    ));
    rows.extend(full(
        B,
        2,
        vec![
            vec![0, 1, 2, 3, 4, 5],
            vec![6, 7, 8, 9, 10, 11],
            vec![12, 13, 14, 15, 16, 17],
            vec![18, 19, 20, 21, 22, 23],
        ],
    ));
    rows.extend(elided(
        C,
        0,
        vec![
            (vec![0, 36, 72, 108, 12], vec![32, 68, 104, 140]),
            (vec![1, 37, 73, 109, 13], vec![33, 69, 105, 141]),
            (vec![2, 38, 74, 110, 14], vec![34, 70, 106, 142]),
            (vec![3, 39, 75, 111, 15], vec![35, 71, 107, 143]),
        ],
    ));
    rows.extend(elided(
        C,
        1,
        vec![
            (vec![0, 1, 2, 3, 36, 37, 38, 39], vec![132, 133, 134, 135]),
            (vec![4, 5, 6, 7, 40, 41, 42, 43], vec![136, 137, 138, 139]),
            (vec![8, 9, 10, 11, 44, 45, 46, 47], vec![140, 141, 142, 143]),
        ],
    ));
    rows.extend(elided(
        C,
        2,
        vec![
            ((0..12).chain([36]).collect(), vec![117, 118, 119]),
            ((12..24).chain([48]).collect(), vec![129, 130, 131]),
            ((24..36).chain([60]).collect(), vec![141, 142, 143]),
        ],
    ));
    rows.extend(elided(
        C,
        3,
        vec![
            ((0..9).collect(), vec![33, 34, 35]),
            ((36..45).collect(), vec![69, 70, 71]),
            ((72..81).collect(), vec![105, 106, 107]),
            ((108..117).collect(), vec![141, 142, 143]),
        ],
    ));
    rows
}

impl GoldenRow {
    /// Whether `row` agrees with every printed entry.
    pub fn matches(&self, row: &[usize]) -> bool {
        if self.tail.is_empty() {
            return row == self.head.as_slice();
        }
        row.len() >= self.head.len() + self.tail.len()
            && row.starts_with(&self.head)
            && row.ends_with(&self.tail)
    }
}
