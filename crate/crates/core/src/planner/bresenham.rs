use crate::obstacle_map::GridCoord;

/// Integer Bresenham line from `a` to `b`, both endpoints included, ordered from `a`.
///
/// This is the single-loop all-octant form (error term `dx + dy`). It is not
/// reversal-symmetric: for some slopes `bresenham(b, a)` visits a different
/// cell set than `bresenham(a, b)` reversed.
pub fn bresenham(a: GridCoord, b: GridCoord) -> Vec<GridCoord> {
    let (mut x, mut y) = (a.i as i64, a.j as i64);
    let (x1, y1) = (b.i as i64, b.j as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push(GridCoord::new(x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}
