//! CSV emission: a header row, data rows and a trailing metadata comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;

pub const BUILD_ID: &str = env!("MPP_BUILD_ID");

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn finish(mut self, command: &str, seed: u64) -> String {
        let _ = writeln!(self.text, "# build={BUILD_ID} seed={seed} command={command}");
        self.text
    }

    pub fn write(self, path: &Path, command: &str, seed: u64) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.finish(command, seed))?;
        Ok(())
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.6e}")
}
