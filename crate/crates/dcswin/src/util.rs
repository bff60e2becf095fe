//! Small shared utilities: worker-thread control and row-parallel loops.

use std::sync::OnceLock;

/// Number of worker threads, from `DCSWIN_THREADS` (default 1, minimum 1).
/// Read once per process.
pub fn thread_count() -> usize {
    static COUNT: OnceLock<usize> = OnceLock::new();
    *COUNT.get_or_init(|| {
        std::env::var("DCSWIN_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Apply `f(row_index, row)` to every `row_len`-sized row of `out`,
/// splitting the rows contiguously across up to [`thread_count`] scoped
/// threads. Rows are disjoint `&mut` slices, so no synchronization is
/// needed inside `f`.
pub fn parallel_rows<T: Send, F>(out: &mut [T], row_len: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(row_len > 0, "row_len must be positive");
    assert_eq!(out.len() % row_len, 0, "buffer not a whole number of rows");
    let rows = out.len() / row_len;
    let workers = thread_count().min(rows.max(1));
    if workers <= 1 {
        for (r, row) in out.chunks_mut(row_len).enumerate() {
            f(r, row);
        }
        return;
    }
    let rows_per = rows.div_ceil(workers);
    std::thread::scope(|scope| {
        for (piece_idx, piece) in out.chunks_mut(rows_per * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, row) in piece.chunks_mut(row_len).enumerate() {
                    f(piece_idx * rows_per + j, row);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_visit_every_index_once() {
        let mut buf = vec![0usize; 12];
        parallel_rows(&mut buf, 3, |r, row| {
            for (i, v) in row.iter_mut().enumerate() {
                *v = r * 3 + i;
            }
        });
        assert_eq!(buf, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn single_row_buffer() {
        let mut buf = vec![0.0f32; 5];
        parallel_rows(&mut buf, 5, |r, row| {
            assert_eq!(r, 0);
            row.fill(1.0);
        });
        assert_eq!(buf, vec![1.0; 5]);
    }

    #[test]
    #[should_panic(expected = "whole number of rows")]
    fn ragged_buffer_rejected() {
        let mut buf = vec![0u8; 7];
        parallel_rows(&mut buf, 3, |_, _| {});
    }
}
