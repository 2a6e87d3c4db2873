/// Busy intervals of one resource. Reservations take the earliest gap that
/// starts no earlier than the requested time, so work submitted out of time
/// order can still use idle periods.
#[derive(Debug, Clone, Default)]
pub(crate) struct Timeline {
    /// Disjoint `[start, end)` intervals sorted by start.
    busy: Vec<(f64, f64)>,
    total: f64,
}

impl Timeline {
    /// Earliest `s >= t` such that `[s, s + d)` is free.
    pub fn earliest(&self, t: f64, d: f64) -> f64 {
        // first interval that ends after t
        let mut i = self.busy.partition_point(|&(_, e)| e <= t);
        let mut s = t;
        while i < self.busy.len() {
            let (bs, be) = self.busy[i];
            if s + d <= bs {
                return s;
            }
            s = s.max(be);
            i += 1;
        }
        s
    }

    pub fn reserve(&mut self, s: f64, d: f64) {
        if d <= 0.0 {
            return;
        }
        let i = self.busy.partition_point(|&(bs, _)| bs < s);
        self.busy.insert(i, (s, s + d));
        self.total += d;
    }

    /// Reserves the earliest fitting gap and returns its start.
    pub fn book(&mut self, t: f64, d: f64) -> f64 {
        let s = self.earliest(t, d);
        self.reserve(s, d);
        s
    }

    pub fn busy_time(&self) -> f64 {
        self.total
    }
}

/// Earliest common gap of length `d` at or after `t` on every timeline.
pub(crate) fn earliest_common(lines: &[&Timeline], t: f64, d: f64) -> f64 {
    let mut s = t;
    loop {
        let mut next = s;
        for l in lines {
            next = next.max(l.earliest(next, d));
        }
        if next == s {
            return s;
        }
        s = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_gaps() {
        let mut t = Timeline::default();
        assert_eq!(t.book(0.0, 1.0), 0.0);
        assert_eq!(t.book(3.0, 1.0), 3.0);
        assert_eq!(t.book(0.5, 1.0), 1.0);
        assert_eq!(t.book(0.0, 1.5), 4.0);
        assert_eq!(t.book(2.0, 1.0), 2.0);
        assert_eq!(t.busy_time(), 5.5);
    }

    #[test]
    fn common_gap() {
        let mut a = Timeline::default();
        let mut b = Timeline::default();
        a.reserve(0.0, 1.0);
        b.reserve(1.0, 1.0);
        assert_eq!(earliest_common(&[&a, &b], 0.0, 1.0), 2.0);
        assert_eq!(earliest_common(&[&a, &b], 0.0, 0.0), 0.0);
    }
}
