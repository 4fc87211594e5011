use crate::grid::Grid;

/// Source coordinate for output index `dst`: `(dst + 0.5) * in / out - 0.5`
/// clamped to `[0, in - 1]`, split into a base index and a fraction.
fn source_coord(dst: usize, len_in: usize, len_out: usize) -> (usize, usize, f32) {
    let scale = len_in as f32 / len_out as f32;
    let src = ((dst as f32 + 0.5) * scale - 0.5).clamp(0.0, (len_in - 1) as f32);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(len_in - 1);
    (i0, i1, src - i0 as f32)
}

/// Bilinear resize with half-pixel centers and edge clamping. Each lerp
/// is `a + (b - a) * t`, so constant maps stay exactly constant.
pub fn upsample_bilinear(map: &Grid, height: usize, width: usize) -> Grid {
    assert!(height > 0 && width > 0, "output size must be positive");
    let (h_in, w_in) = map.dims();
    let cols: Vec<_> = (0..width).map(|x| source_coord(x, w_in, width)).collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (r0, r1, ty) = source_coord(y, h_in, height);
        for &(c0, c1, tx) in &cols {
            let top = map.get(r0, c0) + (map.get(r0, c1) - map.get(r0, c0)) * tx;
            let bottom = map.get(r1, c0) + (map.get(r1, c1) - map.get(r1, c0)) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    Grid::new(height, width, out).expect("positive size")
}
