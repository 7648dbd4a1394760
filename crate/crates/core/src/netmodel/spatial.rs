use super::Node;

/// Uniform bucket grid over node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialIndex {
    origin: (f64, f64),
    max: (f64, f64),
    cell: f64,
    cols: usize,
    rows: usize,
    /// Node indices per cell, ascending by node id.
    buckets: Vec<Vec<usize>>,
}

impl SpatialIndex {
    pub fn build(nodes: &[Node]) -> Self {
        if nodes.is_empty() {
            return SpatialIndex {
                origin: (0.0, 0.0),
                max: (0.0, 0.0),
                cell: 1.0,
                cols: 1,
                rows: 1,
                buckets: vec![Vec::new()],
            };
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for n in nodes {
            x0 = x0.min(n.x);
            y0 = y0.min(n.y);
            x1 = x1.max(n.x);
            y1 = y1.max(n.y);
        }
        let (w, h) = ((x1 - x0).max(1.0), (y1 - y0).max(1.0));
        let n = nodes.len() as f64;
        // the second term keeps degenerate (collinear) layouts to ~n cells
        let cell = (w * h / n).sqrt().max(w.max(h) / n).max(1.0);
        let cols = ((x1 - x0) / cell).floor() as usize + 1;
        let rows = ((y1 - y0) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| nodes[i].id);
        let mut idx = SpatialIndex { origin: (x0, y0), max: (x1, y1), cell, cols, rows, buckets: Vec::new() };
        for i in order {
            let (c, r) = idx.cell_of((nodes[i].x, nodes[i].y));
            buckets[r * cols + c].push(i);
        }
        idx.buckets = buckets;
        idx
    }

    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        (self.origin, self.max)
    }

    fn cell_of(&self, p: (f64, f64)) -> (usize, usize) {
        let c = ((p.0 - self.origin.0) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64);
        let r = ((p.1 - self.origin.1) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64);
        (c as usize, r as usize)
    }

    /// Distance from `p` to the nearest point of cell (c, r).
    fn cell_distance(&self, p: (f64, f64), c: usize, r: usize) -> f64 {
        let x0 = self.origin.0 + c as f64 * self.cell;
        let y0 = self.origin.1 + r as f64 * self.cell;
        let dx = (x0 - p.0).max(p.0 - (x0 + self.cell)).max(0.0);
        let dy = (y0 - p.1).max(p.1 - (y0 + self.cell)).max(0.0);
        dx.hypot(dy)
    }

    /// Visit cells ring by ring around `p`; stop once a ring is entirely
    /// farther than `limit()`.
    fn scan(&self, p: (f64, f64), mut visit: impl FnMut(usize), limit: impl Fn() -> f64) {
        let (pc, pr) = self.cell_of(p);
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            let mut any_close = false;
            let c_lo = pc as i64 - ring as i64;
            let c_hi = pc as i64 + ring as i64;
            let r_lo = pr as i64 - ring as i64;
            let r_hi = pr as i64 + ring as i64;
            for r in r_lo.max(0)..=r_hi.min(self.rows as i64 - 1) {
                let edge_row = r == r_lo || r == r_hi;
                let step = if edge_row { 1 } else { (c_hi - c_lo).max(1) as usize };
                for c in (c_lo..=c_hi).step_by(step) {
                    if c < 0 || c >= self.cols as i64 {
                        continue;
                    }
                    let (c, r) = (c as usize, r as usize);
                    if self.cell_distance(p, c, r) > limit() {
                        continue;
                    }
                    any_close = true;
                    for &n in &self.buckets[r * self.cols + c] {
                        visit(n);
                    }
                }
            }
            if !any_close && ring > 0 {
                break;
            }
        }
    }

    pub fn nearest(&self, nodes: &[Node], p: (f64, f64), max_radius: f64) -> Option<usize> {
        let best = std::cell::Cell::new(None::<(f64, u32, usize)>);
        self.scan(
            p,
            |n| {
                let d = (nodes[n].x - p.0).hypot(nodes[n].y - p.1);
                if d > max_radius {
                    return;
                }
                let cand = (d, nodes[n].id, n);
                match best.get() {
                    Some(b) if (b.0, b.1) <= (cand.0, cand.1) => {}
                    _ => best.set(Some(cand)),
                }
            },
            || best.get().map_or(max_radius, |b| b.0.min(max_radius)),
        );
        best.get().map(|b| b.2)
    }

    pub fn within(&self, nodes: &[Node], p: (f64, f64), radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.scan(
            p,
            |n| {
                if (nodes[n].x - p.0).hypot(nodes[n].y - p.1) <= radius {
                    out.push(n);
                }
            },
            || radius,
        );
        out.sort_by_key(|&n| nodes[n].id);
        out
    }
}
