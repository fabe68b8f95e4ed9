//! Buffered artifacts: nothing touches the output directory until a task has succeeded,
//! and a failed write removes whatever was already written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use kolmo::grid::SpatialGrid;
use kolmo::io::fmt_g17;

/// Files produced by one task, in memory.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn push(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file into `dir` (created if needed). On any failure the files written so
    /// far are removed and the error returned.
    pub fn commit(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.partial"));
            let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &path));
            if let Err(e) = result {
                let _ = fs::remove_file(&tmp);
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Heatmap of a 2-d slice as an SVG raster of rectangles, one per node, on a grey ramp.
///
/// Returns `None` unless the grid is two-dimensional.
pub fn heatmap_svg(grid: &SpatialGrid, values: &[f64], title: &str, hash: &str) -> Option<String> {
    if grid.dim() != 2 {
        return None;
    }
    let axes = grid.axes();
    let (nx, ny) = (axes[0].n, axes[1].n);
    const CELL: usize = 3;
    const MARGIN: usize = 24;
    let width = nx * CELL + 2 * MARGIN;
    let height = ny * CELL + 2 * MARGIN;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut s = String::new();
    s.push_str(&format!("<!-- config-hash: {hash} -->\n"));
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str(&format!(
        "<title>{}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n",
        escape(title)
    ));
    s.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"16\" font-family=\"monospace\" font-size=\"11\">{} [{} .. {}]</text>\n",
        escape(title),
        fmt_g17(lo),
        fmt_g17(hi)
    ));
    for i in 0..nx {
        for j in 0..ny {
            let v = values[grid.flat_index(&[i, j])];
            let level = (255.0 * (1.0 - (v - lo) / span)).round().clamp(0.0, 255.0) as u8;
            // x₂ grows upwards
            let px = MARGIN + i * CELL;
            let py = MARGIN + (ny - 1 - j) * CELL;
            s.push_str(&format!(
                "<rect x=\"{px}\" y=\"{py}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"#{level:02x}{level:02x}{level:02x}\"/>\n"
            ));
        }
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = std::env::temp_dir().join(format!("kolmo-out-{}", std::process::id()));
        let mut a = Artifacts::default();
        a.push("a.txt", b"one".to_vec());
        a.push("b.txt", b"two".to_vec());
        let paths = a.commit(&dir).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(fs::read(&paths[1]).unwrap(), b"two");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn svg_has_one_rect_per_node() {
        let g = SpatialGrid::cube(2, -1.0, 1.0, 5).unwrap();
        let v = g.sample(|x| x[0] + x[1]);
        let svg = heatmap_svg(&g, &v, "u<0>", "abc").unwrap();
        assert!(svg.starts_with("<!-- config-hash: abc -->"));
        assert_eq!(svg.matches("<rect ").count(), 26);
        assert!(svg.contains("u&lt;0&gt;"));
        let g1 = SpatialGrid::cube(1, -1.0, 1.0, 5).unwrap();
        assert!(heatmap_svg(&g1, &[0.0; 5], "", "").is_none());
    }
}
