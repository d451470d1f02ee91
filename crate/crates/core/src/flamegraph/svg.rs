use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{FlameError, FoldedProfile, SEPARATOR};

#[derive(Debug, Clone)]
pub struct SvgOptions {
    pub width: f64,
    pub frame_height: f64,
    /// Seeds the per-function color choice.
    pub palette_seed: u64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            width: 1200.0,
            frame_height: 16.0,
            palette_seed: 0,
        }
    }
}

#[derive(Default)]
struct Node {
    weight: u64,
    children: BTreeMap<String, Node>,
}

impl Node {
    fn depth(&self) -> usize {
        self.children.values().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }
}

fn fnv1a(seed: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn color(seed: u64, name: &str) -> (u8, u8, u8) {
    let h = fnv1a(seed, name);
    (205 + (h % 50) as u8, ((h >> 8) % 230) as u8, ((h >> 16) % 55) as u8)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 8.0;
const CHAR_WIDTH: f64 = 7.0;

struct Layout<'a> {
    opts: &'a SvgOptions,
    total: f64,
    max_depth: usize,
    out: String,
}

impl Layout<'_> {
    fn frame(&mut self, name: &str, node: &Node, depth: usize, x: f64) {
        let w = self.opts.width * node.weight as f64 / self.total;
        let h = self.opts.frame_height;
        let y = MARGIN_TOP + (self.max_depth - depth) as f64 * h;
        let (r, g, b) = color(self.opts.palette_seed, name);
        let pct = 100.0 * node.weight as f64 / self.total;
        let name_x = escape(name);
        write!(
            self.out,
            "<g data-depth=\"{depth}\"><title>{name_x} ({} samples, {pct:.2}%)</title>\
             <rect x=\"{x:.4}\" y=\"{y:.1}\" width=\"{w:.4}\" height=\"{:.1}\" fill=\"rgb({r},{g},{b})\"/>",
            node.weight,
            h - 1.0
        )
        .unwrap();
        let fit = ((w - 6.0) / CHAR_WIDTH).floor();
        if fit >= 3.0 {
            let fit = fit as usize;
            let label: String = if name.chars().count() <= fit {
                name.to_string()
            } else {
                name.chars().take(fit - 2).collect::<String>() + ".."
            };
            write!(
                self.out,
                "<text x=\"{:.4}\" y=\"{:.1}\">{}</text>",
                x + 3.0,
                y + h - 5.0,
                escape(&label)
            )
            .unwrap();
        }
        self.out.push_str("</g>\n");
        let mut cx = x;
        for (child_name, child) in &node.children {
            self.frame(child_name, child, depth + 1, cx);
            cx += self.opts.width * child.weight as f64 / self.total;
        }
    }
}

/// Renders `profile` as a standalone SVG flame graph.
///
/// Each distinct path prefix becomes one rectangle whose width is
/// proportional to the samples passing through it; depth grows upwards from
/// the outermost frames. Output is byte-identical for equal inputs.
pub fn render_svg(profile: &FoldedProfile, title: &str, opts: &SvgOptions) -> Result<String, FlameError> {
    if profile.total_weight == 0 || profile.lines.is_empty() {
        return Err(FlameError::Empty);
    }
    let mut roots: BTreeMap<String, Node> = BTreeMap::new();
    for (path, &w) in &profile.lines {
        let mut frames = path.split(SEPARATOR);
        let first = frames.next().unwrap_or_default();
        let mut node = roots.entry(first.to_string()).or_default();
        node.weight += w;
        for f in frames {
            node = node.children.entry(f.to_string()).or_default();
            node.weight += w;
        }
    }
    let max_depth = roots.values().map(Node::depth).max().unwrap_or(0);
    let height = MARGIN_TOP + (max_depth + 1) as f64 * opts.frame_height + MARGIN_BOTTOM;
    let mut layout = Layout {
        opts,
        total: profile.total_weight as f64,
        max_depth,
        out: String::new(),
    };
    let w = opts.width;
    write!(
        layout.out,
        "<?xml version=\"1.0\" standalone=\"no\"?>\n\
         <svg version=\"1.1\" xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{height}\" \
         viewBox=\"0 0 {w} {height}\" font-family=\"Verdana, sans-serif\" font-size=\"12\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{height}\" fill=\"#f8f8f8\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"17\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
    .unwrap();
    let mut x = 0.0;
    for (name, node) in &roots {
        layout.frame(name, node, 0, x);
        x += w * node.weight as f64 / layout.total;
    }
    layout.out.push_str("</svg>\n");
    Ok(layout.out)
}
